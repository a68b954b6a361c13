#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "obsflow/datagen.hpp"
#include "obsflow/fft.hpp"
#include "obsflow/io.hpp"
#include "obsflow/rng.hpp"

using namespace obsflow;
using namespace obsflow::data;

namespace {

double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

bool mats_equal(const Mat& a, const Mat& b) {
  return a.rows == b.rows && a.cols == b.cols && a.a == b.a;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.num_samples() != b.num_samples() || a.base_seed != b.base_seed ||
      a.streams != b.streams || a.split != b.split)
    return false;
  for (long j = 0; j < a.num_samples(); ++j) {
    const auto jj = static_cast<std::size_t>(j);
    if (!mats_equal(a.inputs[jj], b.inputs[jj]) ||
        !mats_equal(a.outputs[jj], b.outputs[jj]))
      return false;
  }
  return true;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct TempFile {
  std::string path;
  explicit TempFile(const char* name) : path(std::string("/tmp/obsflow_test_") + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("initial condition sampling") {
  SUBCASE("L63 draws fill the specified box") {
    auto pts = sample_nu0(dynsys::make_l63({0}, {1, 2}), 11, 1000);
    REQUIRE(pts.size() == 1000);
    double zmax = 0.0;
    for (const auto& p : pts) {
      REQUIRE(p.size() == 3);
      CHECK(p[0] >= -15.0);
      CHECK(p[0] <= 15.0);
      CHECK(p[1] >= -15.0);
      CHECK(p[1] <= 15.0);
      CHECK(p[2] >= 0.0);
      CHECK(p[2] <= 40.0);
      zmax = std::max(zmax, p[2]);
    }
    CHECK(zmax > 30.0);
  }

  SUBCASE("L96 draws stay within F +/- 1") {
    std::vector<std::size_t> all(40);
    for (std::size_t i = 0; i < 40; ++i) all[i] = i;
    auto sys = dynsys::make_l96(40, 8.0, all, {});
    auto pts = sample_nu0(sys, 5, 200);
    for (const auto& p : pts) {
      REQUIRE(p.size() == 40);
      for (double v : p) {
        CHECK(v >= 7.0);
        CHECK(v <= 9.0);
      }
    }
  }

  SUBCASE("KS draws are unit mean-square band-limited fields") {
    std::vector<std::size_t> all(128);
    for (std::size_t i = 0; i < 128; ++i) all[i] = i;
    auto sys = dynsys::make_ks(128, 32.0 * M_PI, all, {});
    auto pts = sample_nu0(sys, 3, 20);
    for (const auto& u : pts) {
      REQUIRE(u.size() == 128);
      CHECK(rms(u) == doctest::Approx(1.0).epsilon(1e-12));
      auto v = fft_real(u);
      for (std::size_t k = 9; k <= 119; ++k)
        CHECK(std::abs(v[k]) < 1e-9 * 128);
      double mean = 0.0;
      for (double x : u) mean += x;
      CHECK(std::abs(mean) / 128.0 < 1e-12);
    }
  }

  SUBCASE("same seed reproduces, different seed does not") {
    auto sys = dynsys::make_l63({0}, {1, 2});
    auto a = sample_nu0(sys, 42, 10);
    auto b = sample_nu0(sys, 42, 10);
    auto c = sample_nu0(sys, 43, 10);
    CHECK(a == b);
    CHECK(a != c);
  }

  SUBCASE("count below one is rejected") {
    CHECK_THROWS_AS(sample_nu0(dynsys::make_l63({0}, {1, 2}), 1, 0), ConfigError);
  }
}

TEST_CASE("burn-in") {
  auto sys = dynsys::make_l63({0}, {1, 2});
  auto pts = sample_nu0(sys, 7, 50);

  SUBCASE("zero duration is the identity") {
    auto out = burn_in(sys, pts, 0.0);
    CHECK(out == pts);
  }

  SUBCASE("L63 lands inside the attractor bounding box") {
    auto out = burn_in(sys, pts, 20.0);
    for (const auto& p : out) {
      CHECK(std::abs(p[0]) <= 25.0);
      CHECK(std::abs(p[1]) <= 35.0);
      CHECK(p[2] >= 0.0);
      CHECK(p[2] <= 55.0);
    }
  }

  SUBCASE("deterministic") {
    auto a = burn_in(sys, pts, 20.0);
    auto b = burn_in(sys, pts, 20.0);
    CHECK(a == b);
  }
}

TEST_CASE("spectral filter") {
  SplitRng rng(99, 0);
  std::vector<double> u(128);
  for (double& v : u) v = rng.normal();

  SUBCASE("k_keep = N/2 is the identity") {
    auto f = spectral_filter(u, 64);
    for (std::size_t i = 0; i < u.size(); ++i)
      CHECK(f[i] == doctest::Approx(u[i]).epsilon(1e-12));
  }

  SUBCASE("idempotent projection") {
    auto f1 = spectral_filter(u, 20);
    auto f2 = spectral_filter(f1, 20);
    for (std::size_t i = 0; i < u.size(); ++i)
      CHECK(f2[i] == doctest::Approx(f1[i]).epsilon(1e-11));
  }

  SUBCASE("a pure mode beyond the band is zeroed") {
    const std::size_t n = 256;
    std::vector<double> mode(n);
    for (std::size_t j = 0; j < n; ++j)
      mode[j] = std::sin(2.0 * M_PI * 70.0 * static_cast<double>(j) /
                         static_cast<double>(n));
    auto f = spectral_filter(mode, 64);
    for (double v : f) CHECK(std::abs(v) < 1e-10);
  }

  SUBCASE("zeroed modes carry no energy and the field moves") {
    auto f = spectral_filter(u, 16);
    auto v = fft_real(f);
    for (std::size_t k = 16; k <= 112; ++k) CHECK(std::abs(v[k]) < 1e-9);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      num += (f[i] - u[i]) * (f[i] - u[i]);
      den += u[i] * u[i];
    }
    CHECK(std::sqrt(num / den) < 1.0);
    CHECK(num > 0.0);
  }

  SUBCASE("bad arguments are rejected") {
    CHECK_THROWS_AS(spectral_filter(u, 0), ConfigError);
    CHECK_THROWS_AS(spectral_filter(u, 65), ConfigError);
    CHECK_THROWS_AS(spectral_filter(std::vector<double>(100, 1.0), 8), ConfigError);
  }
}

TEST_CASE("task specs") {
  SUBCASE("presets validate and report shapes") {
    CHECK(l63_smoothing().input_len() == 251);
    CHECK(l63_smoothing().input_dim() == 1);
    CHECK(l63_smoothing().output_dim() == 2);
    CHECK(l63_smoothing_z_to_xy().input_dim() == 1);
    CHECK(l63_forecasting().input_len() == 201);
    CHECK(l63_forecasting().output_len() == 201);
    CHECK(l96_smoothing().input_dim() == 30);
    CHECK(l96_smoothing().output_dim() == 10);
    CHECK(l96_forecasting().output_len() == 11);
    CHECK(l96_forecasting().output_dim() == 30);
    CHECK(ks_smoothing().input_len() == 401);
    CHECK(ks_smoothing().output_dim() == 128);
    CHECK(ks_forecasting().output_len() == 9);
  }

  SUBCASE("invariant violations throw") {
    TaskSpec t = l63_smoothing();
    t.output_t1 = 4.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);

    t = l63_forecasting();
    t.output_t0 = 2.5;
    CHECK_THROWS_AS(t.validate(), ConfigError);

    t = l63_smoothing();
    t.dt = 0.03;  // 5/0.03 is not an integer
    CHECK_THROWS_AS(t.validate(), ConfigError);

    t = l63_smoothing();
    t.filter_modes = 16;
    CHECK_THROWS_AS(t.validate(), ConfigError);

    t = ks_smoothing();
    t.filter_modes = 65;
    CHECK_THROWS_AS(t.validate(), ConfigError);
  }

  SUBCASE("JSON round-trip preserves the task and its hash") {
    for (const TaskSpec& t : {l63_smoothing(), l63_forecasting(), l96_forecasting(),
                              ks_smoothing(), ks_forecasting()}) {
      TaskSpec u = TaskSpec::from_json(t.to_json());
      CHECK(u.task == t.task);
      CHECK(u.system.kind == t.system.kind);
      CHECK(u.system.p_indices == t.system.p_indices);
      CHECK(u.system.q_indices == t.system.q_indices);
      CHECK(u.system.params == t.system.params);
      CHECK(u.dt == t.dt);
      CHECK(u.burn_in == t.burn_in);
      CHECK(u.filter_modes == t.filter_modes);
      CHECK(u.hash() == t.hash());
    }
  }

  SUBCASE("hashes separate distinct tasks") {
    CHECK(l63_smoothing().hash() != l63_forecasting().hash());
    CHECK(l63_smoothing().hash() != l63_smoothing_z_to_xy().hash());
    TaskSpec t = l63_smoothing();
    t.dt = 0.01;
    CHECK(t.hash() != l63_smoothing().hash());
  }

  SUBCASE("unknown keys are rejected") {
    std::string j = l63_smoothing().to_json();
    j.insert(j.size() - 1, ",\"extra\":1");
    CHECK_THROWS_AS(TaskSpec::from_json(j), ConfigError);
    CHECK_THROWS_AS(TaskSpec::from_json("{"), ConfigError);
  }
}

TEST_CASE("dataset generation") {
  SUBCASE("L63 smoothing shapes") {
    Dataset ds = generate(l63_smoothing(), 4, 123);
    CHECK(ds.num_samples() == 4);
    CHECK(ds.inputs[0].rows == 251);
    CHECK(ds.inputs[0].cols == 1);
    CHECK(ds.outputs[0].rows == 251);
    CHECK(ds.outputs[0].cols == 2);
    CHECK(ds.retries == 0);
  }

  SUBCASE("L63 forecasting junction point is shared exactly") {
    Dataset ds = generate(l63_forecasting(), 3, 5);
    for (long j = 0; j < 3; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      CHECK(ds.inputs[jj](200, 0) == ds.outputs[jj](0, 0));
    }
  }

  SUBCASE("L96 shapes") {
    Dataset sm = generate(l96_smoothing(), 2, 9);
    CHECK(sm.inputs[0].rows == 251);
    CHECK(sm.inputs[0].cols == 30);
    CHECK(sm.outputs[0].cols == 10);
    Dataset fc = generate(l96_forecasting(), 2, 9);
    CHECK(fc.outputs[0].rows == 11);
    CHECK(fc.outputs[0].cols == 30);
    for (std::size_t c = 0; c < 30; ++c)
      CHECK(fc.inputs[0](250, c) == fc.outputs[0](0, c));
  }

  SUBCASE("KS smoothing inputs are filtered, outputs are the full field") {
    Dataset ds = generate(ks_smoothing(), 1, 17);
    CHECK(ds.inputs[0].rows == 401);
    CHECK(ds.inputs[0].cols == 128);
    CHECK(ds.outputs[0].rows == 401);
    CHECK(ds.outputs[0].cols == 128);
    const double* in_row = ds.inputs[0].row(400);
    const double* out_row = ds.outputs[0].row(400);
    std::vector<double> filt =
        spectral_filter(std::vector<double>(out_row, out_row + 128), 64);
    for (std::size_t c = 0; c < 128; ++c)
      CHECK(in_row[c] == doctest::Approx(filt[c]).epsilon(1e-12));
  }

  SUBCASE("KS forecasting windows are band-limited on both sides") {
    Dataset ds = generate(ks_forecasting(), 1, 17);
    CHECK(ds.inputs[0].rows == 401);
    CHECK(ds.outputs[0].rows == 9);
    for (const Mat* m : {&ds.inputs[0], &ds.outputs[0]}) {
      const double* r = m->row(m->rows - 1);
      auto v = fft_real(std::vector<double>(r, r + 128));
      for (std::size_t k = 32; k <= 96; ++k) CHECK(std::abs(v[k]) < 1e-9);
    }
    for (std::size_t c = 0; c < 128; ++c)
      CHECK(ds.inputs[0](400, c) == ds.outputs[0](0, c));
  }

  SUBCASE("bit-identical across runs and thread counts") {
    Dataset a = generate(l63_smoothing(), 6, 7, Split::Train, 1);
    Dataset b = generate(l63_smoothing(), 6, 7, Split::Train, 1);
    Dataset c = generate(l63_smoothing(), 6, 7, Split::Train, 4);
    CHECK(datasets_equal(a, b));
    CHECK(datasets_equal(a, c));
  }

  SUBCASE("train and test splits are disjoint streams") {
    Dataset tr = generate(l63_smoothing(), 4, 7, Split::Train);
    Dataset te = generate(l63_smoothing(), 4, 7, Split::Test);
    for (long j = 0; j < 4; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      CHECK(tr.streams[jj] != te.streams[jj]);
      CHECK(tr.inputs[jj].a != te.inputs[jj].a);
    }
  }

  SUBCASE("different seeds give different data") {
    Dataset a = generate(l63_smoothing(), 2, 1);
    Dataset b = generate(l63_smoothing(), 2, 2);
    CHECK(!datasets_equal(a, b));
  }

  SUBCASE("count below one is rejected") {
    CHECK_THROWS_AS(generate(l63_smoothing(), 0, 1), ConfigError);
  }
}

TEST_CASE("dataset container") {
  Dataset ds = generate(l63_forecasting(), 3, 21);

  SUBCASE("round-trip is bit-exact and serialization is stable") {
    TempFile f("roundtrip.obsf1");
    save_dataset(ds, f.path);
    Dataset back = load_dataset(f.path);
    CHECK(datasets_equal(ds, back));
    CHECK(back.task.hash() == ds.task.hash());
    CHECK(back.retries == ds.retries);

    TempFile g("again.obsf1");
    save_dataset(back, g.path);
    CHECK(read_file(f.path) == read_file(g.path));
  }

  SUBCASE("corruption is detected") {
    TempFile f("corrupt.obsf1");
    save_dataset(ds, f.path);
    std::string bytes = read_file(f.path);

    std::string flipped = bytes;
    flipped[flipped.size() / 2] = static_cast<char>(flipped[flipped.size() / 2] ^ 0x40);
    write_file(f.path, flipped);
    CHECK_THROWS_AS(load_dataset(f.path), IoError);

    write_file(f.path, bytes.substr(0, bytes.size() - 37));
    CHECK_THROWS_AS(load_dataset(f.path), IoError);

    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    write_file(f.path, wrong_magic);
    CHECK_THROWS_AS(load_dataset(f.path), IoError);

    write_file(f.path, bytes + "x");
    CHECK_THROWS_AS(load_dataset(f.path), IoError);
  }

  SUBCASE("an empty dataset cannot be saved") {
    Dataset empty;
    empty.task = l63_smoothing();
    CHECK_THROWS_AS(save_dataset(empty, "/tmp/obsflow_test_empty.obsf1"), ConfigError);
  }

  SUBCASE("missing file reports an io error") {
    CHECK_THROWS_AS(load_dataset("/tmp/obsflow_no_such_file.obsf1"), IoError);
  }
}
