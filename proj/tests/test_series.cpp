#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "helpers.hpp"
#include "tpc/errors.hpp"
#include "tpc/series.hpp"

using namespace tpc;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto path = testing::temp_dir("series_" + name) / "data.csv";
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST_CASE("timestamps and granularity") {
  const Timestamp t = Timestamp::parse("2017-01-02 03:04:05");
  CHECK(t.format() == "2017-01-02 03:04:05");
  CHECK(t.weekday() == 0);  // a Monday
  CHECK(t.hour() == 3);
  CHECK(Timestamp::parse("2017-01-02T03:04:05") == t);
  CHECK(Timestamp::parse("2017-01-02") == Timestamp::from_civil(2017, 1, 2));
  CHECK_THROWS_AS(Timestamp::parse("2017-13-02"), DataError);
  CHECK(Granularity::parse("hourly").seconds == 3600);
  CHECK(Granularity::parse("15-minute").seconds == 900);
  CHECK(Granularity{900}.label() == "15-minute");
  CHECK_THROWS_AS(Granularity::parse("fortnightly"), ConfigError);
}

TEST_CASE("load a three-row hourly file") {
  const auto path = write_file("three", "date,OT\n2017-01-01 00:00:00,1.5\n"
                                        "2017-01-01 01:00:00,2.5\n2017-01-01 02:00:00,-3\n");
  const RawSeries s = load_csv(path, Granularity::hourly());
  CHECK(s.length() == 3);
  CHECK(s.variables() == 1);
  CHECK(s.names[0] == "OT");
  CHECK(s.values[0][2] == -3.0);
  for (std::size_t i = 1; i < s.length(); ++i) {
    CHECK(s.timestamps[i].seconds - s.timestamps[i - 1].seconds == 3600);
  }
}

TEST_CASE("a skipped hour is rejected and named") {
  const auto path = write_file("gap", "date,OT\n2017-01-01 00:00:00,1\n2017-01-01 02:00:00,2\n");
  try {
    load_csv(path, Granularity::hourly());
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("gap") != std::string::npos);
    CHECK(msg.find("2017-01-01 00:00:00") != std::string::npos);
  }
}

TEST_CASE("malformed cells are data errors") {
  CHECK_THROWS_AS(load_csv(write_file("nan", "date,a\n2017-01-01 00:00:00,x\n"),
                           Granularity::hourly()),
                  DataError);
  CHECK_THROWS_AS(load_csv(write_file("cols", "date,a,b\n2017-01-01 00:00:00,1\n"),
                           Granularity::hourly()),
                  DataError);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", Granularity::hourly()), DataError);
}

TEST_CASE("ETT-style fixture with seven variables") {
  const char* names[] = {"HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"};
  std::string text = "# fixture\ndate";
  for (const char* n : names) text += std::string(",") + n;
  text += "\n";
  Timestamp t = Timestamp::from_civil(2016, 7, 1);
  for (int r = 0; r < 2000; ++r) {
    text += t.format();
    for (int v = 0; v < 7; ++v) text += "," + std::to_string(r * 0.01 + v);
    text += "\n";
    t = t.plus(3600);
  }
  const RawSeries s = load_csv(write_file("ett", text), Granularity::hourly());
  CHECK(s.variables() == 7);
  CHECK(s.length() == 2000);
  CHECK(s.names[6] == "OT");
  CHECK(s.values[3][1999] == doctest::Approx(19.99 + 3));
}

TEST_CASE("csv write and read round trip") {
  SyntheticSpec spec;
  spec.length = 50;
  spec.variables = 2;
  const RawSeries s = generate_synthetic(spec);
  const auto path = testing::temp_dir("roundtrip") / "s.csv";
  write_csv(path, s, "kappa = 1\nsigma = 0.1");
  const RawSeries r = load_csv(path, Granularity::hourly());
  CHECK(r.timestamps == s.timestamps);
  CHECK(r.values == s.values);
}

TEST_CASE("synthetic series without calendar coupling") {
  SyntheticSpec spec;
  spec.kappa = 0.0;
  spec.sigma = 0.0;
  spec.length = 24 * 14;
  const RawSeries s = generate_synthetic(spec);
  for (unsigned d = 0; d < 7; ++d) CHECK(weekday_amplitude(d, 0.0) == 1.0);
  // With one phase per day, the daily peak is the amplitude.
  for (std::size_t day = 0; day < 14; ++day) {
    double peak = 0.0;
    for (std::size_t h = 0; h < 24; ++h) peak = std::max(peak, std::abs(s.values[0][day * 24 + h]));
    CHECK(peak <= 1.0 + 1e-12);
    CHECK(peak > 0.96);
  }
}

TEST_CASE("synthetic series are reproducible from the seed") {
  SyntheticSpec spec;
  spec.sigma = 0.0;
  spec.length = 500;
  CHECK(generate_synthetic(spec).values == generate_synthetic(spec).values);
  spec.sigma = 0.1;
  const auto a = generate_synthetic(spec);
  CHECK(a.values == generate_synthetic(spec).values);
  spec.seed = 1;
  CHECK(a.values != generate_synthetic(spec).values);
}

TEST_CASE("weekday amplitudes are recoverable from a long sample") {
  SyntheticSpec spec;
  spec.kappa = 1.0;
  spec.sigma = 0.1;
  spec.length = 24 * 7 * 100;
  const RawSeries s = generate_synthetic(spec);
  double sq[7] = {}, n[7] = {};
  for (std::size_t t = 0; t < s.length(); ++t) {
    const unsigned d = s.timestamps[t].weekday();
    sq[d] += s.values[0][t] * s.values[0][t];
    n[d] += 1.0;
  }
  for (unsigned d = 0; d < 7; ++d) {
    // E[x^2] over a full day = a^2 / 2 + sigma^2
    const double est = std::sqrt(2.0 * (sq[d] / n[d] - spec.sigma * spec.sigma));
    const double want = weekday_amplitude(d, 1.0);
    CHECK(std::abs(est - want) < 0.05 * want);
  }
}

TEST_CASE("RevIN examples") {
  double mean = 0.0, sd = 0.0;
  const std::vector<double> w{1, 2, 3};
  const auto z = revin_normalize(w, mean, sd);
  CHECK(mean == 2.0);
  CHECK(sd == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(z[0] == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(z[1] == 0.0);
  CHECK(z[2] == doctest::Approx(1.2247).epsilon(1e-4));

  const std::vector<double> flat{5, 5, 5};
  const auto zf = revin_normalize(flat, mean, sd);
  CHECK(sd == kRevinEps);
  for (double v : zf) CHECK(v == 0.0);

  CHECK(revin_denormalize(std::vector<double>{0.0}, 3.0, 2.0)[0] == 3.0);
  CHECK(revin_denormalize(std::vector<double>{1.0}, 0.0, 1.0)[0] == 1.0);
  CHECK_THROWS_AS(revin_normalize(std::vector<double>{1.0}, mean, sd), ConfigError);
}

TEST_CASE("RevIN round trip, multivariate") {
  const std::vector<std::vector<double>> w{testing::random_values(40, 1, 3.0),
                                           testing::random_values(40, 2, 0.01)};
  const Normalized n = revin_normalize(w);
  for (double s : n.stats.std) CHECK(s >= kRevinEps);
  const auto back = revin_denormalize(n.values, n.stats);
  for (std::size_t v = 0; v < 2; ++v) CHECK(testing::max_abs_diff(back[v], w[v]) < 1e-10);
}

TEST_CASE("patch counts") {
  CHECK(patch_count(96, 16, 16) == 7);
  CHECK(patch_count(4, 4, 4) == 2);
  CHECK_THROWS_AS(patch_count(3, 4, 1), ConfigError);
  CHECK_THROWS_AS(patch_count(8, 4, 0), ConfigError);
}

TEST_CASE("patches are slices of the padded window") {
  std::vector<double> w(10);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i) * 1.5 - 4.0;
  const PatchSequence ps = patchify(w, 4, 2);
  REQUIRE(ps.count == 5);
  std::vector<double> padded = w;
  padded.insert(padded.end(), w.end() - 2, w.end());
  for (std::size_t p = 0; p < ps.count; ++p) {
    for (std::size_t k = 0; k < 4; ++k) CHECK(ps.patch(p)[k] == padded[p * 2 + k]);
  }
  const PatchSequence one = patchify(std::vector<double>{1, 2, 3, 4}, 4, 4);
  CHECK(one.count == 2);
  CHECK(std::vector<double>(one.patch(1).begin(), one.patch(1).end()) ==
        std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("windows and chronological splits") {
  SyntheticSpec spec;
  spec.length = 1000;
  spec.variables = 2;
  const RawSeries s = generate_synthetic(spec);
  const auto all = make_windows(s, 96, 32, 10);
  CHECK(all.size() == 2 * ((1000 - 128) / 10 + 1));
  const auto& w = all[1];
  CHECK(w.start == 10);
  CHECK(w.lookback.front() == s.values[0][10]);
  CHECK(w.target.values.front() == s.values[0][106]);
  CHECK(w.target.span.start == s.time_at(106));
  CHECK(w.target.span.end == s.time_at(137));

  const SplitBorders b = chronological_split(1000);
  CHECK(b.train_end == 700);
  CHECK(b.val_end == 800);
  for (Split sp : {Split::train, Split::validation, Split::test}) {
    const auto ws = split_windows(s, b, sp, 96, 32, 1);
    REQUIRE_FALSE(ws.empty());
    const std::size_t lo = sp == Split::train ? 0 : sp == Split::validation ? 700 : 800;
    const std::size_t hi = sp == Split::train ? 700 : sp == Split::validation ? 800 : 1000;
    for (const auto& x : ws) {
      CHECK(x.start + 96 >= lo);
      CHECK(x.start + 96 + 32 <= hi);
    }
  }
  CHECK_THROWS_AS(make_windows(s, 990, 32, 1), ConfigError);
}
