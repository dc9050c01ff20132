#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "kpcast/kpcast.hpp"

using namespace kpcast;
using namespace kpcast::ingest;

namespace {

std::string satellite_header(char sep) {
  std::string h;
  for (const auto& c : default_column_spec()) {
    if (!h.empty()) h += sep;
    h += sep == ',' ? "\"" + c.name + "\"" : c.key;
  }
  return h;
}

std::string satellite_row(int year, int doy, int hour, double fill, char sep) {
  std::ostringstream os;
  os << year << sep << doy << sep << hour;
  for (std::size_t i = 3; i < default_column_spec().size(); ++i) os << sep << fill + static_cast<double>(i);
  return os.str();
}

TimeTable column_table(const std::vector<UtcSeconds>& ts, const std::vector<double>& v,
                       const std::vector<int>& missing) {
  TimeTable t({{"x", ""}});
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double val[] = {v[i]};
    const std::uint8_t m[] = {static_cast<std::uint8_t>(missing[i])};
    t.append_row(ts[i], val, m);
  }
  return t;
}

}  // namespace

TEST(Satellite, ThreeRowFixtureWhitespace) {
  std::stringstream ss;
  ss << "# comment\n" << satellite_header(' ') << '\n';
  for (int h = 0; h < 3; ++h) ss << satellite_row(2022, 1, h, 10.0 * h, ' ') << '\n';
  const auto t = parse_satellite_table(ss);
  ASSERT_EQ(t.rows(), 3u);
  ASSERT_EQ(t.cols(), default_column_spec().size());
  EXPECT_EQ(t.timestamp(0), parse_iso8601("2022-01-01T00:00:00Z"));
  EXPECT_EQ(t.timestamp(2), parse_iso8601("2022-01-01T02:00:00Z"));
  for (std::size_t c = 0; c < t.cols(); ++c) EXPECT_EQ(t.columns()[c].name, default_column_spec()[c].name);
  EXPECT_DOUBLE_EQ(t.value(1, t.column_index("Scalar B, nT")), 13.0);
  EXPECT_DOUBLE_EQ(t.value(2, t.column_index("Quasy-Invariant")), 48.0);
}

TEST(Satellite, CommaHeaderWithQuotedNames) {
  std::stringstream ss;
  ss << satellite_header(',') << '\n' << satellite_row(2024, 60, 5, 0.0, ',') << '\n';
  const auto t = parse_satellite_table(ss);
  ASSERT_EQ(t.rows(), 1u);
  EXPECT_EQ(t.timestamp(0), utc_seconds(2024, 2, 29, 5));
  EXPECT_DOUBLE_EQ(t.value(0, t.column_index("BX, nT (GSE, GSM)")), 7.0);
}

TEST(Satellite, DuplicateTimestampIsValidationError) {
  std::stringstream ss;
  ss << satellite_header(' ') << '\n' << satellite_row(2022, 1, 0, 0, ' ') << '\n' << satellite_row(2022, 1, 0, 0, ' ') << '\n';
  try {
    parse_satellite_table(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
  }
}

TEST(Satellite, MissingColumnIsSchemaError) {
  std::stringstream ss("YEAR DOY Hour scalar_b\n2022 1 0 5\n");
  try {
    parse_satellite_table(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Schema);
  }
}

TEST(Satellite, BadNumberReportsLine) {
  std::stringstream ss;
  auto row = satellite_row(2022, 1, 0, 0, ' ');
  row.replace(row.rfind(' ') + 1, std::string::npos, "abc");
  ss << satellite_header(' ') << '\n' << row << '\n';
  try {
    parse_satellite_table(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Kp, ParseSnapsAndValidates) {
  std::stringstream ss("time,kp\n2024-05-10T00:00:00Z,3.667\n2024-05-10T03:00:00Z,9\n");
  const auto s = parse_kp_series(ss);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s.kp[0], 11.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.kp[1], 9.0);
  std::stringstream off("2024-05-10T01:00:00Z,3\n");
  EXPECT_THROW(parse_kp_series(off), Error);
  std::stringstream bad("2024-05-10T00:00:00Z,3.5\n");
  EXPECT_THROW(parse_kp_series(bad), Error);
}

TEST(Sanitize, SentinelBecomesMissing) {
  TimeTable t({{"Scalar B, nT", "nT"}});
  for (double v : {999.9, 5.2}) {
    const double val[] = {v};
    t.append_row(static_cast<UtcSeconds>(t.rows()) * kHour, val);
  }
  SentinelConfig cfg;
  cfg.sentinels["Scalar B, nT"] = {999.9};
  const auto s = sanitize(t, cfg);
  EXPECT_TRUE(s.missing(0, 0));
  EXPECT_FALSE(s.missing(1, 0));
  EXPECT_EQ(s.value(1, 0), 5.2);
  EXPECT_TRUE(sanitize(s, cfg) == s);
  EXPECT_TRUE(sanitize(t, SentinelConfig{}) == t);
}

TEST(Sanitize, UnknownColumnIsConfigError) {
  TimeTable t({{"a", ""}});
  SentinelConfig cfg;
  cfg.sentinels["b"] = {1.0};
  EXPECT_THROW(sanitize(t, cfg), Error);
}

TEST(Sanitize, DefaultTableCoversEveryFeatureColumn) {
  const auto cfg = default_sentinels();
  for (const auto& c : default_column_spec()) {
    if (!is_temporal_column(c.name)) {
      EXPECT_TRUE(cfg.sentinels.count(c.name)) << c.name;
    }
  }
}

TEST(Interpolate, Examples) {
  const std::vector<UtcSeconds> ts3 = {0, kHour, 2 * kHour};
  auto a = interpolate_linear(column_table(ts3, {1, NAN, 3}, {0, 1, 0}));
  EXPECT_DOUBLE_EQ(a.value(1, 0), 2.0);
  EXPECT_FALSE(a.any_missing());
  auto b = interpolate_linear(column_table(ts3, {NAN, 4, 8}, {1, 0, 0}));
  EXPECT_DOUBLE_EQ(b.value(0, 0), 4.0);
  auto c = interpolate_linear(column_table({0, kHour, 2 * kHour, 3 * kHour}, {0, NAN, NAN, 9}, {0, 1, 1, 0}));
  EXPECT_DOUBLE_EQ(c.value(1, 0), 3.0);
  EXPECT_DOUBLE_EQ(c.value(2, 0), 6.0);
}

TEST(Interpolate, TimeWeightedOnIrregularSpacing) {
  auto t = interpolate_linear(column_table({0, kHour, 4 * kHour}, {0, NAN, 8}, {0, 1, 0}));
  EXPECT_DOUBLE_EQ(t.value(1, 0), 2.0);
}

TEST(Interpolate, AllMissingIsUnfillable) {
  try {
    interpolate_linear(column_table({0, kHour}, {NAN, NAN}, {1, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Unfillable);
  }
}

TEST(Resample, ForwardFillExamples) {
  auto a = resample_hourly_ffill(column_table({0, 2 * kHour}, {1, 3}, {0, 0}));
  ASSERT_EQ(a.rows(), 3u);
  EXPECT_EQ(a.timestamp(1), kHour);
  EXPECT_EQ(a.value(1, 0), 1.0);
  auto id = column_table({0, kHour, 2 * kHour}, {1, 2, 3}, {0, 0, 0});
  EXPECT_TRUE(resample_hourly_ffill(id) == id);
  auto h = resample_hourly_ffill(column_table({kHour / 2, kHour + kHour / 2}, {5, 6}, {0, 0}));
  ASSERT_EQ(h.rows(), 2u);
  EXPECT_EQ(h.timestamp(0), 0);
  EXPECT_TRUE(h.missing(0, 0));
  EXPECT_EQ(h.timestamp(1), kHour);
  EXPECT_EQ(h.value(1, 0), 5.0);
}

TEST(Merge, KpBroadcastAndInnerJoin) {
  TimeTable sat({{"s", ""}}), img({{"img_0", ""}});
  for (int h = 0; h < 8; ++h) {
    const double v[] = {double(h)};
    sat.append_row(h * kHour, v);
    if (h >= 1 && h <= 5) img.append_row(h * kHour, v);
  }
  KpSeries kp{{0, kThreeHours}, {2.0, 11.0 / 3.0}};
  const auto m = merge_by_timestamp(sat, kp, img);
  ASSERT_EQ(m.rows(), 5u);
  const auto k = m.column_index("kp");
  EXPECT_EQ(m.value(0, k), 2.0);  // 01:00
  EXPECT_EQ(m.value(1, k), 2.0);  // 02:00
  EXPECT_EQ(m.value(2, k), 11.0 / 3.0);
  EXPECT_EQ(m.columns()[0].name, "s");
  EXPECT_EQ(m.columns()[2].name, "img_0");
}

TEST(Merge, KpAtMidnightCoversThreeHours) {
  TimeTable sat({{"s", ""}}), img({{"img_0", ""}});
  for (int h = 0; h < 4; ++h) {
    const double v[] = {double(h)};
    sat.append_row(h * kHour, v);
    img.append_row(h * kHour, v);
  }
  const auto m = merge_by_timestamp(sat, KpSeries{{0}, {4.0}}, img);
  EXPECT_EQ(m.rows(), 3u);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(m.value(r, 1), 4.0);
}

TEST(Merge, DisjointAndCollisionsFail) {
  TimeTable sat({{"s", ""}}), img({{"img_0", ""}}), clash({{"s", ""}});
  const double v[] = {1.0};
  sat.append_row(0, v);
  img.append_row(100 * kHour, v);
  clash.append_row(0, v);
  KpSeries kp{{0}, {1.0}};
  EXPECT_THROW(merge_by_timestamp(sat, kp, img), Error);
  try {
    merge_by_timestamp(sat, kp, clash);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Merge);
  }
}

TEST(ImageFeatures, TextAndBinaryRoundTripBitExact) {
  std::vector<FeatureRecord> recs;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int h = 0; h < 5; ++h) {
    FeatureRecord r{utc_seconds(2024, 5, 1, h), {}};
    for (int i = 0; i < 7; ++i) r.values.push_back(n(rng) * std::pow(10.0, i - 3));
    recs.push_back(r);
  }
  recs[2].values[3] = -0.0;
  const auto expected = records_to_table(recs, 7);
  std::stringstream text, bin;
  write_image_features_text(text, recs, 7);
  write_image_features_binary(bin, recs, 7);
  const auto from_text = parse_image_features(text);
  const auto from_bin = parse_image_features(bin);
  EXPECT_TRUE(from_text == expected);
  EXPECT_TRUE(from_bin == expected);
  EXPECT_EQ(from_bin.columns()[6].name, "img_6");
}

TEST(ImageFeatures, MalformedInputs) {
  std::stringstream no_header("2024-05-01T00:00:00Z,1,2\n");
  EXPECT_THROW(parse_image_features(no_header), Error);
  std::stringstream wrong_width("# kpcast-image-features v1 dim=2\n2024-05-01T00:00:00Z,1\n");
  EXPECT_THROW(parse_image_features(wrong_width), Error);
  std::stringstream unsorted("# kpcast-image-features v1 dim=1\n2024-05-01T01:00:00Z,1\n2024-05-01T00:00:00Z,1\n");
  EXPECT_THROW(parse_image_features(unsorted), Error);
  std::vector<FeatureRecord> recs = {{0, {1.0, 2.0}}};
  std::stringstream bin;
  write_image_features_binary(bin, recs, 2);
  auto s = bin.str();
  s[20] = 99;  // corrupt the record length
  std::stringstream bad(s);
  EXPECT_THROW(parse_image_features(bad), Error);
}

TEST(Condition, ChainFillsEverything) {
  TimeTable t({{"Scalar B, nT", "nT"}});
  for (double v : {1.0, 999.9, 999.9, 7.0}) {
    const double val[] = {v};
    t.append_row(static_cast<UtcSeconds>(t.rows()) * 2 * kHour, val);
  }
  SentinelConfig cfg;
  cfg.sentinels["Scalar B, nT"] = {999.9};
  const auto c = condition(t, cfg);
  EXPECT_EQ(c.rows(), 7u);
  EXPECT_FALSE(c.any_missing());
  EXPECT_DOUBLE_EQ(c.value(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(c.value(6, 0), 7.0);
  // Forward fill copies the sentinel row's mask, so 01:00 stays 1 and 02:00..05:00 are interpolated.
  EXPECT_DOUBLE_EQ(c.value(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(c.value(3, 0), 1.0 + 6.0 * 2.0 / 5.0);
}
