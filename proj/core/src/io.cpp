#include "obsflow/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "json_detail.hpp"
#include "obsflow/crc32.hpp"

namespace obsflow::data {

const char* to_string(TaskKind k) {
  return k == TaskKind::Smoothing ? "smoothing" : "forecasting";
}

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "smoothing") return TaskKind::Smoothing;
  if (s == "forecasting") return TaskKind::Forecasting;
  throw ConfigError("unknown task kind \"" + s + "\"");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split \"" + s + "\"");
}

long TaskSpec::input_len() const {
  return dynsys::aligned_steps(input_t0, input_t1, dt) + 1;
}

long TaskSpec::output_len() const {
  return dynsys::aligned_steps(output_t0, output_t1, dt) + 1;
}

long TaskSpec::input_dim() const { return static_cast<long>(system.p_indices.size()); }

long TaskSpec::output_dim() const {
  if (task == TaskKind::Forecasting) return static_cast<long>(system.p_indices.size());
  if (!system.q_indices.empty()) return static_cast<long>(system.q_indices.size());
  return static_cast<long>(system.state_dim());
}

void TaskSpec::validate() const {
  system.validate();
  if (!(dt > 0.0)) throw ConfigError("task: dt must be positive");
  if (!(burn_in >= 0.0)) throw ConfigError("task: burn_in must be non-negative");
  if (input_t0 != 0.0) throw ConfigError("task: input window must start at 0");
  if (!(input_t1 > input_t0)) throw ConfigError("task: input window must be non-empty");
  if (task == TaskKind::Smoothing) {
    if (input_t0 != output_t0 || input_t1 != output_t1)
      throw ConfigError("task: smoothing requires equal input and output windows");
  } else {
    if (output_t0 != input_t1)
      throw ConfigError("task: forecasting output must start where the input ends");
    if (!(output_t1 > output_t0))
      throw ConfigError("task: output window must be non-empty");
  }
  dynsys::aligned_steps(input_t0, input_t1, dt);
  dynsys::aligned_steps(output_t0, output_t1, dt);

  if (filter_modes) {
    if (system.kind != dynsys::SystemKind::KS)
      throw ConfigError("task: filter_modes requires a KS system");
    const long n = static_cast<long>(system.state_dim());
    if (*filter_modes < 1 || *filter_modes > n / 2)
      throw ConfigError("task: filter_modes out of range [1, n/2]");
    if (static_cast<long>(system.p_indices.size()) != n)
      throw ConfigError("task: filter_modes requires observing the full grid");
  }
  if (system.q_indices.empty() && task == TaskKind::Smoothing && !filter_modes)
    throw ConfigError("task: smoothing with empty q needs filter_modes");
}

std::string TaskSpec::to_json() const { return detail::task_to_json(*this).dump(); }

TaskSpec TaskSpec::from_json(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ConfigError(std::string("task: malformed JSON: ") + e.what());
  }
  return detail::task_from_json(j, "task");
}

std::uint64_t TaskSpec::hash() const { return detail::fnv1a(to_json()); }

void Dataset::validate() const {
  task.validate();
  const long j_count = num_samples();
  if (j_count < 1) throw ConfigError("dataset: needs at least one sample");
  if (static_cast<long>(outputs.size()) != j_count ||
      static_cast<long>(streams.size()) != j_count)
    throw ConfigError("dataset: inputs/outputs/streams lengths disagree");

  const std::size_t n_in = static_cast<std::size_t>(task.input_len());
  const std::size_t d_in = static_cast<std::size_t>(task.input_dim());
  const std::size_t n_out = static_cast<std::size_t>(task.output_len());
  const std::size_t d_out = static_cast<std::size_t>(task.output_dim());
  for (long j = 0; j < j_count; ++j) {
    const Mat& in = inputs[static_cast<std::size_t>(j)];
    const Mat& out = outputs[static_cast<std::size_t>(j)];
    if (in.rows != n_in || in.cols != d_in || out.rows != n_out || out.cols != d_out)
      throw ConfigError("dataset: sample shape disagrees with task");
    for (double v : in.a)
      if (!std::isfinite(v)) throw NumericalError("dataset: non-finite input entry");
    for (double v : out.a)
      if (!std::isfinite(v)) throw NumericalError("dataset: non-finite output entry");
  }
}

namespace {

constexpr char kMagic[8] = {'O', 'B', 'S', 'F', 'L', 'O', 'W', '1'};

void put_bytes(std::ostream& os, Crc32& crc, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  crc.update(p, n);
}

void get_bytes(std::istream& is, Crc32* crc, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw IoError(std::string("dataset file truncated in ") + what);
  if (crc) crc->update(p, n);
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();

  detail::json header;
  header["format_version"] = 1;
  header["dtype"] = "f64";
  header["task"] = detail::task_to_json(ds.task);
  header["split"] = to_string(ds.split);
  header["shapes"] = {
      {"inputs", {ds.num_samples(), ds.task.input_len(), ds.task.input_dim()}},
      {"outputs", {ds.num_samples(), ds.task.output_len(), ds.task.output_dim()}}};
  header["seeds"] = {{"base", ds.base_seed}, {"streams", ds.streams}};
  header["retries"] = ds.retries;
  const std::string htext = header.dump();
  if (htext.size() > 0xffffffffull) throw IoError("dataset header too large");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open \"" + path + "\" for writing");

  Crc32 crc;
  os.write(kMagic, sizeof(kMagic));
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  put_bytes(os, crc, &hlen, sizeof(hlen));
  put_bytes(os, crc, htext.data(), htext.size());
  for (const Mat& m : ds.inputs)
    put_bytes(os, crc, m.a.data(), m.a.size() * sizeof(double));
  for (const Mat& m : ds.outputs)
    put_bytes(os, crc, m.a.data(), m.a.size() * sizeof(double));
  const std::uint32_t sum = crc.value();
  os.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
  os.flush();
  if (!os) throw IoError("write failed for \"" + path + "\"");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open \"" + path + "\" for reading");

  char magic[8];
  get_bytes(is, nullptr, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("\"" + path + "\" is not an OBSF1 dataset file");

  Crc32 crc;
  std::uint32_t hlen = 0;
  get_bytes(is, &crc, &hlen, sizeof(hlen), "header length");
  std::string htext(hlen, '\0');
  get_bytes(is, &crc, htext.data(), hlen, "header");

  detail::json header;
  try {
    header = detail::json::parse(htext);
  } catch (const detail::json::parse_error& e) {
    throw IoError(std::string("dataset header is malformed JSON: ") + e.what());
  }
  detail::require_keys(
      header, {"format_version", "dtype", "task", "split", "shapes", "seeds", "retries"},
      "dataset header");
  if (detail::require(header, "format_version", "dataset header").get<long>() != 1)
    throw IoError("unsupported dataset format version");
  if (detail::require(header, "dtype", "dataset header").get<std::string>() != "f64")
    throw IoError("unsupported dataset dtype");

  Dataset ds;
  ds.task = detail::task_from_json(detail::require(header, "task", "dataset header"),
                                   "dataset header task");
  ds.split = split_from_string(
      detail::require(header, "split", "dataset header").get<std::string>());
  const detail::json& seeds = detail::require(header, "seeds", "dataset header");
  detail::require_keys(seeds, {"base", "streams"}, "dataset header seeds");
  ds.base_seed = detail::require(seeds, "base", "dataset header").get<std::uint64_t>();
  ds.streams = detail::require(seeds, "streams", "dataset header")
                   .get<std::vector<std::uint64_t>>();
  ds.retries = detail::require(header, "retries", "dataset header").get<long>();

  const detail::json& shapes = detail::require(header, "shapes", "dataset header");
  detail::require_keys(shapes, {"inputs", "outputs"}, "dataset header shapes");
  const auto in_shape = detail::require(shapes, "inputs", "dataset header")
                            .get<std::vector<long>>();
  const auto out_shape = detail::require(shapes, "outputs", "dataset header")
                             .get<std::vector<long>>();
  if (in_shape.size() != 3 || out_shape.size() != 3 || in_shape[0] != out_shape[0] ||
      in_shape[0] < 1)
    throw IoError("dataset header shapes are inconsistent");
  if (in_shape[1] != ds.task.input_len() || in_shape[2] != ds.task.input_dim() ||
      out_shape[1] != ds.task.output_len() || out_shape[2] != ds.task.output_dim())
    throw IoError("dataset header shapes disagree with the task");

  const long j_count = in_shape[0];
  ds.inputs.reserve(static_cast<std::size_t>(j_count));
  ds.outputs.reserve(static_cast<std::size_t>(j_count));
  for (long j = 0; j < j_count; ++j) {
    Mat m(static_cast<std::size_t>(in_shape[1]), static_cast<std::size_t>(in_shape[2]));
    get_bytes(is, &crc, m.a.data(), m.a.size() * sizeof(double), "input blob");
    ds.inputs.push_back(std::move(m));
  }
  for (long j = 0; j < j_count; ++j) {
    Mat m(static_cast<std::size_t>(out_shape[1]), static_cast<std::size_t>(out_shape[2]));
    get_bytes(is, &crc, m.a.data(), m.a.size() * sizeof(double), "output blob");
    ds.outputs.push_back(std::move(m));
  }

  std::uint32_t stored = 0;
  get_bytes(is, nullptr, &stored, sizeof(stored), "checksum");
  if (stored != crc.value()) throw IoError("dataset checksum mismatch");
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes after dataset checksum");

  ds.validate();
  return ds;
}

}  // namespace obsflow::data
