#include "obsflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <string>

#include "json_detail.hpp"
#include "obsflow/crc32.hpp"
#include "obsflow/errors.hpp"

namespace obsflow::nop {

Checkpoint snapshot(const Model& model, std::uint64_t task_hash, std::uint64_t init_seed,
                    long train_steps) {
  Checkpoint c;
  c.config = model.config();
  c.task_hash = task_hash;
  c.init_seed = init_seed;
  c.train_steps = train_steps;
  c.params = model.named_values();
  return c;
}

Model restore_model(const Checkpoint& ckpt) {
  Model m(ckpt.config, ckpt.init_seed);
  m.set_parameters(ckpt.params);
  return m;
}

namespace {

constexpr char kMagic[8] = {'O', 'B', 'S', 'P', 'A', 'R', 'M', '1'};

void put_bytes(std::ostream& os, Crc32& crc, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  crc.update(p, n);
}

void get_bytes(std::istream& is, Crc32* crc, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw IoError(std::string("checkpoint file truncated in ") + what);
  if (crc) crc->update(p, n);
}

void check_moment_shapes(const Checkpoint& c) {
  if (!c.has_optimizer) {
    if (!c.adam_m.empty() || !c.adam_v.empty())
      throw ConfigError("checkpoint: optimizer moments present without the flag");
    return;
  }
  if (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size())
    throw ConfigError("checkpoint: optimizer moments must parallel the parameters");
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    const Mat& p = c.params[i].second;
    if (c.adam_m[i].rows != p.rows || c.adam_m[i].cols != p.cols ||
        c.adam_v[i].rows != p.rows || c.adam_v[i].cols != p.cols)
      throw ConfigError("checkpoint: optimizer moment shape mismatch");
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ckpt.config.validate();
  check_moment_shapes(ckpt);

  detail::json header;
  header["format_version"] = 1;
  header["dtype"] = "f64";
  header["model"] = detail::model_to_json(ckpt.config);
  header["task_hash"] = ckpt.task_hash;
  header["init_seed"] = ckpt.init_seed;
  header["train_steps"] = ckpt.train_steps;
  detail::json plist = detail::json::array();
  for (const auto& [name, m] : ckpt.params)
    plist.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
  header["params"] = std::move(plist);
  header["optimizer"] = ckpt.has_optimizer ? "adam" : "none";
  const std::string htext = header.dump();
  if (htext.size() > 0xffffffffull) throw IoError("checkpoint header too large");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open \"" + path + "\" for writing");

  Crc32 crc;
  os.write(kMagic, sizeof(kMagic));
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  put_bytes(os, crc, &hlen, sizeof(hlen));
  put_bytes(os, crc, htext.data(), htext.size());
  for (const auto& [name, m] : ckpt.params)
    put_bytes(os, crc, m.a.data(), m.a.size() * sizeof(double));
  if (ckpt.has_optimizer) {
    for (const Mat& m : ckpt.adam_m) put_bytes(os, crc, m.a.data(), m.a.size() * sizeof(double));
    for (const Mat& m : ckpt.adam_v) put_bytes(os, crc, m.a.data(), m.a.size() * sizeof(double));
  }
  const std::uint32_t sum = crc.value();
  os.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
  os.flush();
  if (!os) throw IoError("write failed for \"" + path + "\"");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open \"" + path + "\" for reading");

  char magic[8];
  get_bytes(is, nullptr, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("\"" + path + "\" is not an OBSP1 checkpoint file");

  Crc32 crc;
  std::uint32_t hlen = 0;
  get_bytes(is, &crc, &hlen, sizeof(hlen), "header length");
  std::string htext(hlen, '\0');
  get_bytes(is, &crc, htext.data(), hlen, "header");

  detail::json header;
  try {
    header = detail::json::parse(htext);
  } catch (const detail::json::parse_error& e) {
    throw IoError(std::string("checkpoint header is malformed JSON: ") + e.what());
  }
  detail::require_keys(header,
                       {"format_version", "dtype", "model", "task_hash", "init_seed",
                        "train_steps", "params", "optimizer"},
                       "checkpoint header");
  if (detail::require(header, "format_version", "checkpoint header").get<long>() != 1)
    throw IoError("unsupported checkpoint format version");
  if (detail::require(header, "dtype", "checkpoint header").get<std::string>() != "f64")
    throw IoError("unsupported checkpoint dtype");

  Checkpoint c;
  try {
    c.config = detail::model_from_json(
        detail::require(header, "model", "checkpoint header"), "checkpoint model");
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint model config invalid: ") + e.what());
  }
  c.task_hash = detail::require(header, "task_hash", "checkpoint header").get<std::uint64_t>();
  c.init_seed = detail::require(header, "init_seed", "checkpoint header").get<std::uint64_t>();
  c.train_steps = detail::require(header, "train_steps", "checkpoint header").get<long>();

  const std::string opt =
      detail::require(header, "optimizer", "checkpoint header").get<std::string>();
  if (opt != "adam" && opt != "none") throw IoError("unknown checkpoint optimizer kind");
  c.has_optimizer = opt == "adam";

  const detail::json& plist = detail::require(header, "params", "checkpoint header");
  if (!plist.is_array() || plist.empty())
    throw IoError("checkpoint header parameter list is invalid");
  for (const auto& e : plist) {
    detail::require_keys(e, {"name", "rows", "cols"}, "checkpoint header param");
    const std::string name =
        detail::require(e, "name", "checkpoint header param").get<std::string>();
    const long rows = detail::require(e, "rows", "checkpoint header param").get<long>();
    const long cols = detail::require(e, "cols", "checkpoint header param").get<long>();
    if (rows < 1 || cols < 1) throw IoError("checkpoint header param shape is invalid");
    Mat m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    c.params.emplace_back(name, std::move(m));
  }
  for (auto& [name, m] : c.params)
    get_bytes(is, &crc, m.a.data(), m.a.size() * sizeof(double), "parameter blob");
  if (c.has_optimizer) {
    auto read_moments = [&](std::vector<Mat>& dst, const char* what) {
      dst.reserve(c.params.size());
      for (const auto& [name, m] : c.params) {
        Mat mm(m.rows, m.cols);
        get_bytes(is, &crc, mm.a.data(), mm.a.size() * sizeof(double), what);
        dst.push_back(std::move(mm));
      }
    };
    read_moments(c.adam_m, "first-moment blob");
    read_moments(c.adam_v, "second-moment blob");
  }

  std::uint32_t stored = 0;
  get_bytes(is, nullptr, &stored, sizeof(stored), "checksum");
  if (stored != crc.value()) throw IoError("checkpoint checksum mismatch");
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes after checkpoint checksum");

  return c;
}

}  // namespace obsflow::nop
