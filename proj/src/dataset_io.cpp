#include "stld/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "stld/config.hpp"

namespace stld {

namespace fs = std::filesystem;

namespace {

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    if constexpr (sizeof(U) == 4) return __builtin_bswap32(v);
    else return __builtin_bswap64(v);
  }
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ValidationError("read_raster: truncated file " + path.string());
  return to_le(v);
}

fs::path raster_path(const fs::path& dir, int id) { return dir / "rasters" / (std::to_string(id) + ".f32"); }

}  // namespace

void write_raster(const fs::path& path, const Raster& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("write_raster: cannot open " + path.string());
  put_u32(out, static_cast<std::uint32_t>(image.rows()));
  put_u32(out, static_cast<std::uint32_t>(image.cols()));
  put_u32(out, 1);
  for (Index i = 0; i < image.size(); ++i)
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(image.data()[i])));
  if (!out) throw RuntimeError("write_raster: write failed for " + path.string());
}

Raster read_raster(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("read_raster: cannot open " + path.string());
  const auto h = get_u32(in, path), w = get_u32(in, path), ch = get_u32(in, path);
  require(ch == 1, "read_raster: only single-channel rasters are supported (" + path.string() + ")");
  require(h > 0 && w > 0 && h <= 65536 && w <= 65536, "read_raster: implausible size in " + path.string());
  Raster r(h, w);
  for (Index i = 0; i < r.size(); ++i) r.data()[i] = std::bit_cast<float>(get_u32(in, path));
  return r;
}

void write_landmarks_csv(std::ostream& out, const std::map<int, LandmarkSet>& rows) {
  out << "id,landmark_index,x,y\n";
  out << std::setprecision(17);
  for (const auto& [id, pts] : rows)
    for (Index k = 0; k < pts.rows(); ++k) out << id << ',' << k << ',' << pts(k, 0) << ',' << pts(k, 1) << '\n';
}

std::map<int, LandmarkSet> read_landmarks_csv(std::istream& in) {
  std::string line;
  std::getline(in, line);
  require(line == "id,landmark_index,x,y", "read_landmarks_csv: unexpected header '" + line + "'");
  std::map<int, std::vector<std::pair<int, Eigen::RowVector2d>>> raw;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    int id = 0, k = 0;
    double x = 0, y = 0;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> id >> c1 >> k >> c2 >> x >> c3 >> y) || c1 != ',' || c2 != ',' || c3 != ',')
      throw ValidationError("read_landmarks_csv: malformed line " + std::to_string(lineno));
    raw[id].push_back({k, Eigen::RowVector2d(x, y)});
  }
  std::map<int, LandmarkSet> out;
  for (auto& [id, pts] : raw) {
    LandmarkSet s(static_cast<Index>(pts.size()), 2);
    std::vector<bool> seen(pts.size(), false);
    for (const auto& [k, p] : pts) {
      require(k >= 0 && k < s.rows() && !seen[k],
              "read_landmarks_csv: bad landmark indices for id " + std::to_string(id));
      seen[k] = true;
      s.row(k) = p;
    }
    out[id] = s;
  }
  return out;
}

void save_task(const fs::path& dir, const StoredTask& task) {
  fs::create_directories(dir / "rasters");
  nlohmann::ordered_json m;
  m["format"] = "stld-dataset";
  m["version"] = 1;
  m["seed"] = task.seed;
  m["generator"] = task_to_json(task.config);
  m["raster"] = {{"height", task.config.grid}, {"width", task.config.grid}, {"channels", 1}, {"dtype", "float32-le"}};
  auto list = [](const std::vector<Sample>& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const auto& s : v) a.push_back({{"id", s.id}, {"pose_latent", s.pose_latent}});
    return a;
  };
  m["splits"] = {{"train", list(task.train)}, {"test", list(task.test)}};
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';

  std::map<int, LandmarkSet> hidden, labels;
  for (const auto* split : {&task.train, &task.test})
    for (const auto& s : *split) {
      write_raster(raster_path(dir, s.id), s.image);
      if (s.has_hidden_gt()) hidden[s.id] = s.hidden_gt();
      if (s.gt) labels[s.id] = *s.gt;
    }
  std::ofstream h(dir / "hidden_gt.csv");
  write_landmarks_csv(h, hidden);
  std::ofstream l(dir / "labels.csv");
  write_landmarks_csv(l, labels);
  if (!h || !l) throw RuntimeError("save_task: write failed in " + dir.string());
}

StoredTask load_task(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ValidationError("load_task: no manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("load_task: bad manifest in " + dir.string() + ": " + e.what());
  }
  require(m.value("format", "") == "stld-dataset" && m.value("version", 0) == 1,
          "load_task: " + dir.string() + " is not a version-1 dataset");
  StoredTask t;
  t.seed = m.at("seed").get<std::uint64_t>();
  t.config = task_from_json(m.at("generator"));

  std::ifstream hf(dir / "hidden_gt.csv"), lf(dir / "labels.csv");
  if (!hf || !lf) throw ValidationError("load_task: missing landmark CSVs in " + dir.string());
  const auto hidden = read_landmarks_csv(hf);
  const auto labels = read_landmarks_csv(lf);

  auto load = [&](const nlohmann::json& list) {
    std::vector<Sample> out;
    for (const auto& e : list) {
      const int id = e.at("id").get<int>();
      std::optional<LandmarkSet> gt, hgt;
      if (auto it = labels.find(id); it != labels.end()) gt = it->second;
      if (auto it = hidden.find(id); it != hidden.end()) hgt = it->second;
      out.emplace_back(id, read_raster(raster_path(dir, id)), gt, hgt, e.at("pose_latent").get<double>());
    }
    return out;
  };
  t.train = load(m.at("splits").at("train"));
  t.test = load(m.at("splits").at("test"));
  return t;
}

}  // namespace stld
