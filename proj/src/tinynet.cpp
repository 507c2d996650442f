#include "stld/tinynet.hpp"

#include <cmath>

namespace stld {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act) {
  switch (act) {
    case Activation::Relu:
      return z.cwiseMax(0.0);
    case Activation::Sigmoid:
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
    case Activation::Identity:
      break;
  }
  return z;
}

Layer make_layer(Index in, Index out, Activation act, Rng& rng) {
  Layer l;
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  l.weight.resize(out, in);
  // Row-major fill order so the stream maps to parameters the same way the
  // checkpoint does.
  for (Index r = 0; r < out; ++r)
    for (Index c = 0; c < in; ++c) l.weight(r, c) = uniform(rng, -a, a);
  l.bias = Eigen::VectorXd::Zero(out);
  l.act = act;
  return l;
}

}  // namespace

Index TinyModel::output_size() const {
  return pathway == Pathway::Heatmap ? static_cast<Index>(dims.landmarks) * dims.grid * dims.grid
                                     : 2 * static_cast<Index>(dims.landmarks);
}

Index TinyModel::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

bool TinyModel::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

Eigen::VectorXd TinyModel::flat_parameters() const {
  Eigen::VectorXd p(parameter_count());
  Index o = 0;
  for (const auto& l : layers) {
    for (Index r = 0; r < l.weight.rows(); ++r) {
      p.segment(o, l.weight.cols()) = l.weight.row(r).transpose();
      o += l.weight.cols();
    }
    p.segment(o, l.bias.size()) = l.bias;
    o += l.bias.size();
  }
  return p;
}

void TinyModel::set_flat_parameters(const Eigen::Ref<const Eigen::VectorXd>& p) {
  require(p.size() == parameter_count(), "set_flat_parameters: size mismatch");
  Index o = 0;
  for (auto& l : layers) {
    for (Index r = 0; r < l.weight.rows(); ++r) {
      l.weight.row(r) = p.segment(o, l.weight.cols()).transpose();
      o += l.weight.cols();
    }
    l.bias = p.segment(o, l.bias.size());
    o += l.bias.size();
  }
  ++version;
}

TinyModel init_model(Pathway pathway, const ModelDims& dims, std::uint64_t seed) {
  require(dims.grid > 0 && dims.landmarks > 0 && dims.hidden > 0, "init_model: dims must be positive");
  TinyModel m;
  m.pathway = pathway;
  m.dims = dims;
  Rng rng = make_rng(seed, 0x1a7e2);
  const Index in = m.input_size();
  const Index h = dims.hidden;
  if (pathway == Pathway::Heatmap) {
    m.layers.push_back(make_layer(in, h, Activation::Relu, rng));
    m.layers.push_back(make_layer(h, m.output_size(), Activation::Identity, rng));
  } else {
    m.layers.push_back(make_layer(in, h, Activation::Relu, rng));
    m.layers.push_back(make_layer(h, h, Activation::Relu, rng));
    m.layers.push_back(make_layer(h, m.output_size(), Activation::Sigmoid, rng));
  }
  return m;
}

ForwardCache forward(const TinyModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  require(x.rows() == model.input_size(), "forward: input has " + std::to_string(x.rows()) +
                                              " rows, model expects " + std::to_string(model.input_size()));
  ForwardCache cache;
  cache.version = model.version;
  Eigen::MatrixXd a = x;
  for (const auto& l : model.layers) {
    Eigen::MatrixXd z = l.weight * a;
    z.colwise() += l.bias;
    cache.inputs.push_back(std::move(a));
    a = activate(z, l.act);
    cache.pre.push_back(std::move(z));
  }
  cache.output = std::move(a);
  return cache;
}

Eigen::MatrixXd predict(const TinyModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  require(x.rows() == model.input_size(), "predict: input size mismatch");
  Eigen::MatrixXd a = x;
  for (const auto& l : model.layers) {
    Eigen::MatrixXd z = l.weight * a;
    z.colwise() += l.bias;
    a = activate(z, l.act);
  }
  return a;
}

Gradients Gradients::zeros_like(const TinyModel& model) {
  Gradients g;
  for (const auto& l : model.layers) {
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

bool Gradients::all_finite() const {
  for (std::size_t i = 0; i < weight.size(); ++i)
    if (!weight[i].allFinite() || !bias[i].allFinite()) return false;
  return true;
}

Eigen::VectorXd Gradients::flat() const {
  Index n = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) n += weight[i].size() + bias[i].size();
  Eigen::VectorXd p(n);
  Index o = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    for (Index r = 0; r < weight[i].rows(); ++r) {
      p.segment(o, weight[i].cols()) = weight[i].row(r).transpose();
      o += weight[i].cols();
    }
    p.segment(o, bias[i].size()) = bias[i];
    o += bias[i].size();
  }
  return p;
}

Gradients backward(const TinyModel& model, const ForwardCache& cache,
                   const Eigen::Ref<const Eigen::MatrixXd>& grad_out) {
  if (cache.version != model.version || cache.pre.size() != model.layers.size())
    throw RuntimeError("backward: forward cache is stale (model changed since forward)");
  require(grad_out.rows() == cache.output.rows() && grad_out.cols() == cache.output.cols(),
          "backward: gradient shape does not match forward output");
  Gradients g;
  g.weight.resize(model.layers.size());
  g.bias.resize(model.layers.size());
  Eigen::MatrixXd delta = grad_out;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    const Layer& l = model.layers[i];
    const Eigen::MatrixXd& z = cache.pre[i];
    switch (l.act) {
      case Activation::Relu:
        delta = (z.array() > 0.0).select(delta, 0.0);
        break;
      case Activation::Sigmoid: {
        const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
        delta = (delta.array() * s * (1.0 - s)).matrix();
        break;
      }
      case Activation::Identity:
        break;
    }
    g.weight[i].noalias() = delta * cache.inputs[i].transpose();
    g.bias[i] = delta.rowwise().sum();
    if (i > 0) delta = l.weight.transpose() * delta;
  }
  return g;
}

AdamState AdamState::for_model(const TinyModel& model, double lr) {
  AdamState s;
  s.lr = lr;
  s.m = Gradients::zeros_like(model);
  s.v = Gradients::zeros_like(model);
  return s;
}

void adam_step(AdamState& s, TinyModel& model, const Gradients& g) {
  require(g.weight.size() == model.layers.size() && s.m.weight.size() == model.layers.size(),
          "adam_step: gradient/state layer count mismatch");
  for (std::size_t i = 0; i < g.weight.size(); ++i) {
    require(g.weight[i].rows() == model.layers[i].weight.rows() &&
                g.weight[i].cols() == model.layers[i].weight.cols() &&
                g.bias[i].size() == model.layers[i].bias.size(),
            "adam_step: gradient shape mismatch at layer " + std::to_string(i));
  }
  if (!g.all_finite()) {
    for (std::size_t i = 0; i < g.weight.size(); ++i)
      if (!g.weight[i].allFinite() || !g.bias[i].allFinite())
        throw RuntimeError("adam_step: non-finite gradient in layer " + std::to_string(i) + " at step " +
                           std::to_string(s.step + 1));
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = s.beta1 * m + (1.0 - s.beta1) * grad;
    v = s.beta2 * v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
    param.array() -= s.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + s.eps);
  };
  for (std::size_t i = 0; i < g.weight.size(); ++i) {
    update(model.layers[i].weight, s.m.weight[i], s.v.weight[i], g.weight[i]);
    update(model.layers[i].bias, s.m.bias[i], s.v.bias[i], g.bias[i]);
  }
  ++model.version;
  ++model.step;
}

}  // namespace stld
