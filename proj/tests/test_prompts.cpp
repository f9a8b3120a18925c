#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "tpc/errors.hpp"
#include "tpc/prompts.hpp"

using namespace tpc;

namespace {

TemporalSpan span(int day, unsigned hour, int hours_long) {
  const Timestamp s = Timestamp::from_civil(2017, 1, static_cast<unsigned>(day), hour);
  return {s, s.plus(3600LL * hours_long), Granularity::hourly()};
}

}  // namespace

TEST_CASE("prompt text") {
  const TemporalSpan s{Timestamp::from_civil(2017, 1, 1), Timestamp::from_civil(2017, 1, 2, 23),
                       Granularity::hourly()};
  CHECK(render_prompt(s) ==
        "This series spans 2017-01-01 00:00:00 to 2017-01-02 23:00:00. Sampling granularity: "
        "hourly.");
  CHECK(render_prompt(s) == render_prompt(s));

  const TemporalSpan shifted{s.start.plus(3600), s.end.plus(3600), s.granularity};
  const std::string a = render_prompt(s);
  const std::string b = render_prompt(shifted);
  REQUIRE(a.size() == b.size());
  std::vector<std::size_t> diff;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) diff.push_back(i);
  // Only hour digits change: "00" -> "01" in the start, "23" -> "00" plus the
  // day rollover in the end.
  const std::size_t start_field = a.find("2017-01-01 00:00:00");
  const std::size_t end_field = a.find("2017-01-02 23:00:00");
  for (std::size_t i : diff) {
    const bool in_start = i >= start_field && i < start_field + 19;
    const bool in_end = i >= end_field && i < end_field + 19;
    CHECK((in_start || in_end));
  }
  CHECK_FALSE(diff.empty());
}

TEST_CASE("span validation") {
  CHECK_NOTHROW(span(1, 0, 5).validate());
  CHECK_THROWS_AS((TemporalSpan{Timestamp::from_civil(2017, 1, 1), Timestamp::from_civil(2017, 1, 1),
                                Granularity::hourly()}
                       .validate()),
                  ContractError);
  CHECK_THROWS_AS((TemporalSpan{Timestamp::from_civil(2017, 1, 1),
                                Timestamp::from_civil(2017, 1, 1).plus(1800), Granularity::hourly()}
                       .validate()),
                  ContractError);
}

TEST_CASE("spans of a window") {
  const Timestamp s = Timestamp::from_civil(2017, 1, 1);
  const auto per = spans_for_window(s, Granularity::hourly(), 96, 16, 16, SpanPolicy::per_patch);
  REQUIRE(per.size() == 7);
  CHECK(per[0].start == s);
  CHECK(per[0].end == s.plus(15 * 3600));
  CHECK(per[5].end == s.plus(95 * 3600));  // last real patch ends at the window end
  CHECK(per[6].start == s.plus(96 * 3600));
  const auto whole = spans_for_window(s, Granularity::hourly(), 96, 16, 16,
                                      SpanPolicy::whole_window);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].end == s.plus(95 * 3600));
  CHECK(parse_span_policy("per-patch") == SpanPolicy::per_patch);
  CHECK_THROWS_AS(parse_span_policy("daily"), ConfigError);
}

TEST_CASE("bank rows are prompt encodings") {
  DecoderConfig dc;
  TemporalEncoder enc(dc, 1);
  const std::vector<TemporalSpan> one{span(3, 4, 15)};
  const Tensor b1 = build_bank(one, enc);
  CHECK(b1.rows() == 1);
  const auto direct = enc.backbone().encode_text(tokenize(render_prompt(one[0])));
  CHECK(std::vector<double>(b1.values().begin(), b1.values().end()) == direct);

  const auto spans = spans_for_window(Timestamp::from_civil(2017, 1, 1), Granularity::hourly(), 96,
                                      16, 16, SpanPolicy::per_patch);
  const Tensor bank = build_bank(spans, enc);
  CHECK(bank.rows() == 7);
  CHECK(bank.cols() == 64);
  CHECK_THROWS_AS(build_bank(std::vector<TemporalSpan>{}, enc), ContractError);
}

TEST_CASE("cache serves repeat builds bit-identically") {
  DecoderConfig dc;
  auto cache = std::make_shared<BankCache>();
  TemporalEncoder enc(dc, 1, cache);
  const auto spans = spans_for_window(Timestamp::from_civil(2017, 1, 1), Granularity::hourly(), 96,
                                      16, 16, SpanPolicy::per_patch);
  const Tensor a = build_bank(spans, enc);
  CHECK(cache->misses() == 7);
  const Tensor b = build_bank(spans, enc);
  CHECK(cache->hits() == 7);
  CHECK(testing::bit_identical(a, b));
}

TEST_CASE("cache file persists and tolerates a torn tail") {
  const auto path = testing::temp_dir("bankcache") / "bank.bin";
  DecoderConfig dc;
  dc.depth = 1;
  std::vector<double> first;
  {
    auto cache = std::make_shared<BankCache>(path);
    TemporalEncoder enc(dc, 2, cache);
    first = enc.embed(span(2, 0, 3));
    enc.embed(span(2, 1, 3));
    cache->flush();
  }
  {
    std::ofstream app(path, std::ios::binary | std::ios::app);
    const std::uint32_t klen = 40;
    app.write(reinterpret_cast<const char*>(&klen), sizeof klen);
    app << "truncated";
  }
  auto cache = std::make_shared<BankCache>(path);
  CHECK(cache->size() == 2);
  TemporalEncoder enc(dc, 2, cache);
  CHECK(enc.embed(span(2, 0, 3)) == first);
  CHECK(cache->hits() == 1);

  // Keys carry the backbone fingerprint, so another seed never hits.
  TemporalEncoder other(dc, 3, cache);
  other.embed(span(2, 0, 3));
  CHECK(cache->hits() == 1);
}
