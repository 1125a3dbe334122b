#include "tfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tfm/errors.hpp"

namespace tfm::num {

namespace {

void append_f64(std::string& out, double x) {
  auto u = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, double x) {
  auto u = std::bit_cast<std::uint32_t>(static_cast<float>(x));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

double read_f64(const unsigned char* p) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

double read_f32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(u));
}

} // namespace

void save_checkpoint(const std::string& path, const ParamStore& ps,
                     const CheckpointMeta& meta) {
  nlohmann::ordered_json header;
  header["format_version"] = meta.format_version;
  header["model_config"] = meta.model_config;
  header["seed"] = meta.seed;
  header["training_step"] = meta.training_step;
  auto params = nlohmann::ordered_json::array();
  for (const auto& [name, e] : ps.entries()) {
    nlohmann::ordered_json p;
    p["name"] = name;
    p["shape"] = e.value.shape;
    p["precision"] = to_string(e.value.precision);
    params.push_back(std::move(p));
  }
  header["params"] = std::move(params);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open for writing: " + path);
  os << header.dump() << '\n';
  std::string buf;
  for (const auto& [name, e] : ps.entries()) {
    buf.clear();
    buf.reserve(e.value.data.size() * 8);
    if (e.value.precision == Precision::f64) {
      for (double x : e.value.data) append_f64(buf, x);
    } else {
      for (double x : e.value.data) append_f32(buf, x);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  os.flush();
  if (!os) throw io_error("write failed: " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path);
  std::string header_line;
  if (!std::getline(is, header_line))
    throw bad_data("checkpoint: missing header: " + path);

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(header_line);
  } catch (const nlohmann::json::exception& ex) {
    throw bad_data(std::string("checkpoint: bad header json: ") + ex.what());
  }

  CheckpointMeta meta;
  try {
    meta.format_version = header.at("format_version").get<int>();
    if (meta.format_version != kCheckpointFormatVersion)
      throw bad_data("checkpoint: unsupported format version " +
                     std::to_string(meta.format_version));
    meta.model_config = header.at("model_config");
    meta.seed = header.at("seed").get<std::uint64_t>();
    meta.training_step = header.at("training_step").get<std::int64_t>();

    const auto& params = header.at("params");
    if (!params.is_array()) throw bad_data("checkpoint: params must be an array");

    bool populate = ps.entries().empty();
    std::size_t seen = 0;
    for (const auto& p : params) {
      auto name = p.at("name").get<std::string>();
      auto shape = p.at("shape").get<std::vector<std::size_t>>();
      auto prec = parse_precision(p.at("precision").get<std::string>());
      ParamStore::Entry* e = nullptr;
      if (populate) {
        e = &ps.add(name, shape);
      } else {
        if (!ps.has(name))
          throw bad_data("checkpoint: unexpected parameter " + name);
        e = &ps.entry(name);
        if (e->value.shape != shape)
          throw bad_data("checkpoint: shape mismatch for " + name);
      }
      e->value.precision = prec;
      std::size_t width = prec == Precision::f64 ? 8 : 4;
      std::size_t bytes = e->value.data.size() * width;
      std::string raw(bytes, '\0');
      is.read(raw.data(), static_cast<std::streamsize>(bytes));
      if (static_cast<std::size_t>(is.gcount()) != bytes)
        throw bad_data("checkpoint: truncated buffer for " + name);
      const auto* up = reinterpret_cast<const unsigned char*>(raw.data());
      for (std::size_t i = 0; i < e->value.data.size(); ++i) {
        e->value.data[i] =
            prec == Precision::f64 ? read_f64(up + 8 * i) : read_f32(up + 4 * i);
      }
      ++seen;
    }
    if (!populate && seen != ps.entries().size())
      throw bad_data("checkpoint: missing parameters in header");
    char extra;
    if (is.read(&extra, 1))
      throw bad_data("checkpoint: trailing bytes after parameter buffers");
  } catch (const nlohmann::json::exception& ex) {
    throw bad_data(std::string("checkpoint: bad header field: ") + ex.what());
  }
  return meta;
}

} // namespace tfm::num
