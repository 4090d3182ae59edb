#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "afnet/common.hpp"
#include "afnet/hsio.hpp"
#include "fixtures.hpp"

using namespace afnet;
using namespace afnet::hsio;
using fixture::TempDir;

namespace {

HyperspectralCube random_cube(int h, int w, int b, std::uint64_t seed) {
  Rng rng(seed);
  HyperspectralCube c;
  c.height = h;
  c.width = w;
  c.bands = b;
  c.data.resize(static_cast<std::size_t>(h) * w * b);
  for (auto& v : c.data) v = static_cast<float>(rng.uniform(-1e4, 1e4));
  return c;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void overwrite_float(const fs::path& payload, std::size_t index, float value) {
  std::fstream f(payload, std::ios::binary | std::ios::in | std::ios::out);
  f.seekp(static_cast<std::streamoff>(index * 4));
  f.write(reinterpret_cast<const char*>(&value), 4);
}

}  // namespace

TEST(CubeContainer, RoundTripIsBitExact) {
  TempDir dir;
  auto cube = random_cube(7, 5, 11, 3);
  cube.data[0] = -0.0f;
  cube.data[1] = std::numeric_limits<float>::denorm_min();
  cube.data[2] = std::numeric_limits<float>::max();
  cube.band_wavelengths.assign(11, 0.0);
  for (int b = 0; b < 11; ++b) cube.band_wavelengths[b] = 400.0 + 10.5 * b;
  save_cube(cube, dir / "c");
  const auto back = load_cube(dir / "c");
  EXPECT_EQ(back.height, 7);
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.bands, 11);
  ASSERT_EQ(back.data.size(), cube.data.size());
  EXPECT_EQ(std::memcmp(back.data.data(), cube.data.data(), cube.data.size() * 4), 0);
  EXPECT_EQ(back.band_wavelengths, cube.band_wavelengths);
}

TEST(CubeContainer, AnyOfTheThreePathsOpensTheContainer) {
  TempDir dir;
  save_cube(random_cube(2, 2, 2, 1), dir / "c");
  EXPECT_NO_THROW(load_cube(dir / "c"));
  EXPECT_NO_THROW(load_cube(dir / "c.hsij"));
  EXPECT_NO_THROW(load_cube(dir / "c.hsib"));
}

TEST(CubeContainer, HeaderCarriesTheDocumentedKeys) {
  TempDir dir;
  SaveOptions opt;
  opt.name = "scene";
  opt.legend = default_legend(3);
  save_cube(random_cube(3, 4, 2, 1), dir / "c", opt);
  std::ifstream in(dir / "c.hsij");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("height"), 3);
  EXPECT_EQ(j.at("width"), 4);
  EXPECT_EQ(j.at("bands"), 2);
  EXPECT_EQ(j.at("dtype"), "f32");
  EXPECT_EQ(j.at("order"), "bip");
  ASSERT_TRUE(j.contains("legend"));
  EXPECT_EQ(j["legend"].size(), 3u);
  EXPECT_EQ(j["legend"][0].at("id"), 1);
  EXPECT_EQ(j["legend"][0].at("rgb").size(), 3u);
}

TEST(CubeContainer, SingletonZeroCubeIsValid) {
  TempDir dir;
  HyperspectralCube c;
  c.height = c.width = c.bands = 1;
  c.data = {0.0f};
  save_cube(c, dir / "one");
  const auto back = load_cube(dir / "one");
  EXPECT_EQ(back.data.size(), 1u);
  EXPECT_EQ(back.data[0], 0.0f);
}

TEST(CubeContainer, PayloadShortOfHeaderIsSizeMismatch) {
  TempDir dir;
  HyperspectralCube small;
  small.height = 144;
  small.width = 145;
  small.bands = 220;
  small.data.assign(static_cast<std::size_t>(144) * 145 * 220, 0.5f);
  save_cube(small, dir / "ip");
  // Declare 145 rows over the 144-row payload.
  std::ifstream in(dir / "ip.hsij");
  auto j = nlohmann::json::parse(in);
  in.close();
  j["height"] = 145;
  std::ofstream(dir / "ip.hsij") << j.dump();
  try {
    load_cube(dir / "ip");
    FAIL() << "expected a size mismatch";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("size mismatch"), std::string::npos) << e.what();
  }
}

TEST(CubeContainer, ExpectedDescriptorMustMatchHeader) {
  TempDir dir;
  save_cube(random_cube(4, 4, 3, 2), dir / "c");
  DatasetDescriptor d{"x", 4, 4, 3, 0, 0, ""};
  EXPECT_NO_THROW(load_cube(dir / "c", d));
  d.bands = 4;
  EXPECT_THROW(load_cube(dir / "c", d), DataError);
}

TEST(CubeContainer, NonFiniteValuesAreReportedWithCountAndFirstIndex) {
  TempDir dir;
  save_cube(random_cube(3, 3, 2, 5), dir / "c");
  overwrite_float(dir / "c.hsib", 7, std::numeric_limits<float>::quiet_NaN());
  overwrite_float(dir / "c.hsib", 12, std::numeric_limits<float>::infinity());
  try {
    load_cube(dir / "c");
    FAIL() << "expected non-finite error";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2 non-finite"), std::string::npos) << msg;
    EXPECT_NE(msg.find("first at index 7"), std::string::npos) << msg;
  }
}

TEST(CubeContainer, MissingFilesAndBadHeadersAreDataErrors) {
  TempDir dir;
  EXPECT_THROW(load_cube(dir / "nothing"), DataError);
  save_cube(random_cube(2, 2, 2, 1), dir / "c");
  fs::remove(dir / "c.hsib");
  EXPECT_THROW(load_cube(dir / "c"), DataError);
  std::ofstream(dir / "bad.hsij") << "{ not json";
  EXPECT_THROW(read_header(dir / "bad.hsij"), DataError);
  std::ofstream(dir / "dt.hsij") << R"({"height":1,"width":1,"bands":1,"dtype":"i8","order":"bip"})";
  EXPECT_THROW(read_header(dir / "dt.hsij"), DataError);
  std::ofstream(dir / "ord.hsij") << R"({"height":1,"width":1,"bands":1,"dtype":"f32","order":"bsq"})";
  EXPECT_THROW(read_header(dir / "ord.hsij"), DataError);
}

TEST(CubeContainer, DoublePayloadsLoadAsFloat) {
  TempDir dir;
  std::ofstream(dir / "d.hsij") << R"({"height":1,"width":2,"bands":1,"dtype":"f64","order":"bip"})";
  const double v[2] = {0.25, -3.5};
  std::ofstream(dir / "d.hsib", std::ios::binary).write(reinterpret_cast<const char*>(v), sizeof v);
  const auto c = load_cube(dir / "d");
  EXPECT_EQ(c.data, (std::vector<float>{0.25f, -3.5f}));
}

TEST(GroundTruth, RoundTripAndClassCount) {
  TempDir dir;
  const auto gt = make_ground_truth(2, 3, {0, 1, 4, 2, 0, 4});
  EXPECT_EQ(gt.class_count, 4);
  EXPECT_EQ(gt.labeled_count(), 4u);
  save_ground_truth(gt, dir / "gt");
  const auto back = load_ground_truth(dir / "gt");
  EXPECT_EQ(back.labels, gt.labels);
  EXPECT_EQ(back.class_count, 4);
}

TEST(GroundTruth, AllZeroRasterHasNoClasses) {
  const auto gt = make_ground_truth(4, 4, std::vector<std::int32_t>(16, 0));
  EXPECT_EQ(gt.class_count, 0);
  EXPECT_EQ(gt.labeled_count(), 0u);
}

TEST(GroundTruth, ClassCountIsTheMaximumLabel) {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    const int h = 1 + static_cast<int>(rng.below(6)), w = 1 + static_cast<int>(rng.below(6));
    std::vector<std::int32_t> labels(static_cast<std::size_t>(h) * w);
    std::int32_t mx = 0;
    for (auto& l : labels) {
      l = static_cast<std::int32_t>(rng.below(20));
      mx = std::max(mx, l);
    }
    EXPECT_EQ(make_ground_truth(h, w, labels).class_count, mx);
  }
}

TEST(GroundTruth, NegativeLabelsAreRejected) {
  EXPECT_THROW(make_ground_truth(1, 2, {0, -1}), DataError);
}

TEST(ValidatePair, CountsLabeledPixels) {
  HyperspectralCube c = random_cube(2, 3, 1, 1);
  const auto gt = make_ground_truth(2, 3, {0, 1, 1, 0, 2, 3});
  const auto d = validate_pair(c, gt, "toy");
  EXPECT_EQ(d.labeled_sample_count, 4u);
  EXPECT_EQ(d.class_count, 3);
  EXPECT_EQ(d.height, 2);
  EXPECT_EQ(d.bands, 1);
}

TEST(ValidatePair, ErrorsExactlyWhenExtentsDiffer) {
  for (int h = 1; h <= 3; ++h)
    for (int w = 1; w <= 3; ++w) {
      HyperspectralCube c = random_cube(2, 2, 1, 1);
      const auto gt = make_ground_truth(h, w, std::vector<std::int32_t>(h * w, 1));
      if (h == 2 && w == 2) EXPECT_NO_THROW(validate_pair(c, gt));
      else EXPECT_THROW(validate_pair(c, gt), DataError);
    }
}

TEST(ValidatePair, MismatchMessageNamesBothExtents) {
  HyperspectralCube c;
  c.height = c.width = 145;
  c.bands = 1;
  c.data.assign(145 * 145, 0.0f);
  const auto gt = make_ground_truth(144, 145, std::vector<std::int32_t>(144 * 145, 0));
  try {
    validate_pair(c, gt);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("145x145"), std::string::npos) << msg;
    EXPECT_NE(msg.find("144x145"), std::string::npos) << msg;
  }
}

TEST(Legend, DefaultLegendIsValidForManyClassCounts) {
  for (int c = 0; c <= 64; ++c) {
    const auto legend = default_legend(c);
    EXPECT_EQ(static_cast<int>(legend.entries.size()), c);
    EXPECT_NO_THROW(legend.validate());
    for (const auto& e : legend.entries) EXPECT_NE(e.rgb, (std::array<std::uint8_t, 3>{0, 0, 0}));
  }
}

TEST(Legend, RejectsDuplicatesAndGaps) {
  ClassLegend l;
  l.entries = {{1, "a", {1, 2, 3}}, {1, "b", {4, 5, 6}}};
  EXPECT_THROW(l.validate(), DataError);
  l.entries = {{1, "a", {1, 2, 3}}, {3, "b", {4, 5, 6}}};
  EXPECT_THROW(l.validate(), DataError);
  l.entries = {{1, "a", {1, 2, 3}}, {2, "b", {1, 2, 3}}};
  EXPECT_THROW(l.validate(), DataError);
  l.entries = {{2, "b", {4, 5, 6}}, {1, "a", {1, 2, 3}}};
  EXPECT_NO_THROW(l.validate());
}

TEST(Legend, SurvivesGroundTruthContainer) {
  TempDir dir;
  SaveOptions opt;
  opt.legend = ClassLegend{{{1, "corn", {10, 20, 30}}, {2, "grass", {40, 50, 60}}}};
  save_ground_truth(make_ground_truth(1, 2, {1, 2}), dir / "gt", opt);
  const auto legend = load_legend(dir / "gt");
  ASSERT_TRUE(legend);
  ASSERT_EQ(legend->entries.size(), 2u);
  EXPECT_EQ(legend->entries[0].name, "corn");
  EXPECT_EQ(legend->entries[1].rgb, (std::array<std::uint8_t, 3>{40, 50, 60}));
}

TEST(ReferenceScenes, TableValues) {
  const auto ip = find_reference("indian_pines");
  ASSERT_TRUE(ip);
  EXPECT_EQ(ip->height, 145);
  EXPECT_EQ(ip->width, 145);
  EXPECT_EQ(ip->bands, 220);
  EXPECT_EQ(ip->class_count, 16);
  EXPECT_EQ(ip->labeled_sample_count, 10249u);
  const auto sa = find_reference("salinas");
  ASSERT_TRUE(sa);
  EXPECT_EQ(sa->height, 512);
  EXPECT_EQ(sa->width, 217);
  EXPECT_EQ(sa->bands, 224);
  EXPECT_EQ(sa->labeled_sample_count, 54129u);
  const auto pu = find_reference("pavia_university");
  ASSERT_TRUE(pu);
  EXPECT_EQ(pu->class_count, 9);
  EXPECT_EQ(pu->labeled_sample_count, 42776u);
  EXPECT_EQ(short_code("indian_pines"), "IP");
  EXPECT_EQ(short_code("other"), "other");
}

TEST(Sha256, KnownDigest) {
  TempDir dir;
  std::ofstream(dir / "abc", std::ios::binary) << "abc";
  EXPECT_EQ(file_sha256(dir / "abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

// Converter ----------------------------------------------------------------

namespace {

std::vector<double> ramp(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i) * 0.5 - 3.0;
  return v;
}

}  // namespace

TEST(Converter, NpyRowMajorCube) {
  TempDir dir;
  const auto values = ramp(2 * 3 * 4);
  fixture::write_npy(dir / "c.npy", {2, 3, 4}, values, "<f4");
  EXPECT_EQ(detect_format(dir / "c.npy"), SourceFormat::npy);
  const auto cube = cube_from_array(read_source_array(dir / "c.npy"));
  ASSERT_EQ(cube.height, 2);
  ASSERT_EQ(cube.width, 3);
  ASSERT_EQ(cube.bands, 4);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      for (int b = 0; b < 4; ++b) EXPECT_EQ(cube.at(r, c, b), static_cast<float>(values[(r * 3 + c) * 4 + b]));
}

TEST(Converter, NpyFortranOrderMatchesRowMajor) {
  TempDir dir;
  const auto values = ramp(3 * 2 * 5);
  fixture::write_npy(dir / "c.npy", {3, 2, 5}, values, "<f8");
  fixture::write_npy(dir / "f.npy", {3, 2, 5}, values, "<f8", true);
  EXPECT_EQ(read_source_array(dir / "c.npy").values, read_source_array(dir / "f.npy").values);
}

TEST(Converter, NpyIntegerLabels) {
  TempDir dir;
  fixture::write_npy(dir / "gt.npy", {2, 2}, {0, 1, 2, 2}, "|u1");
  const auto gt = ground_truth_from_array(read_source_array(dir / "gt.npy"));
  EXPECT_EQ(gt.class_count, 2);
  EXPECT_EQ(gt.labels, (std::vector<std::int32_t>{0, 1, 2, 2}));
}

TEST(Converter, MatFileUncompressedAndCompressedAgree) {
  TempDir dir;
  const auto values = ramp(4 * 3 * 6);
  fixture::MatVar var{"indian_pines_corrected", {4, 3, 6}, values, fixture::MatType::f64};
  fixture::write_mat(dir / "u.mat", {var}, false);
  fixture::write_mat(dir / "z.mat", {var}, true);
  EXPECT_EQ(detect_format(dir / "u.mat"), SourceFormat::mat_v5);
  const auto u = read_source_array(dir / "u.mat");
  const auto z = read_source_array(dir / "z.mat");
  EXPECT_EQ(u.dims, (std::vector<int>{4, 3, 6}));
  EXPECT_EQ(u.values, values);
  EXPECT_EQ(z.values, values);
  EXPECT_EQ(z.variable, "indian_pines_corrected");
}

TEST(Converter, MatVariableSelection) {
  TempDir dir;
  fixture::MatVar a{"a", {2, 2}, {1, 2, 3, 4}, fixture::MatType::u8};
  fixture::MatVar b{"labels", {2, 2}, {0, 1, 1, 3}, fixture::MatType::u8};
  fixture::write_mat(dir / "m.mat", {a, b}, true);
  EXPECT_EQ(read_source_array(dir / "m.mat").variable, "a");
  EXPECT_EQ(read_source_array(dir / "m.mat", "labels").values, (std::vector<double>{0, 1, 1, 3}));
  EXPECT_THROW(read_source_array(dir / "m.mat", "missing"), DataError);
}

TEST(Converter, RemovedBandsAreOneBased) {
  TempDir dir;
  const auto values = ramp(2 * 2 * 5);
  fixture::write_mat(dir / "c.mat", {{"c", {2, 2, 5}, values, fixture::MatType::i16}});
  const auto cube = cube_from_array(read_source_array(dir / "c.mat"), {1, 5});
  ASSERT_EQ(cube.bands, 3);
  for (int px = 0; px < 4; ++px)
    for (int b = 0; b < 3; ++b)
      EXPECT_EQ(cube.data[px * 3 + b], static_cast<float>(static_cast<std::int16_t>(values[px * 5 + b + 1])));
  EXPECT_THROW(cube_from_array(read_source_array(dir / "c.mat"), {0}), PreconditionError);
  EXPECT_THROW(cube_from_array(read_source_array(dir / "c.mat"), {1, 2, 3, 4, 5}), PreconditionError);
}

TEST(Converter, TruncatedAndUnknownInputsAreFormatErrors) {
  TempDir dir;
  fixture::MatVar var{"c", {3, 3, 3}, ramp(27), fixture::MatType::f64};
  for (bool compressed : {false, true}) {
    auto bytes = fixture::mat_file_bytes({var}, compressed);
    bytes.resize(bytes.size() - 20);
    fixture::save_bytes(dir / "t.mat", bytes);
    EXPECT_THROW(read_source_array(dir / "t.mat"), DataError) << compressed;
  }
  fixture::write_npy(dir / "c.npy", {3, 3}, ramp(9));
  auto npy = file_bytes(dir / "c.npy");
  npy.resize(npy.size() - 4);
  std::ofstream(dir / "c.npy", std::ios::binary).write(npy.data(), static_cast<std::streamsize>(npy.size()));
  EXPECT_THROW(read_source_array(dir / "c.npy"), DataError);

  std::ofstream(dir / "x.bin") << "GIF89a and then some";
  EXPECT_THROW(detect_format(dir / "x.bin"), DataError);
  std::string v73(128, ' ');
  v73.replace(0, 10, "MATLAB 7.3");
  std::ofstream(dir / "h.mat") << v73;
  EXPECT_THROW(detect_format(dir / "h.mat"), DataError);
}

TEST(Converter, RerunOverwritesIdentically) {
  TempDir dir;
  fixture::write_npy(dir / "c.npy", {3, 4, 2}, ramp(24));
  for (int k = 0; k < 2; ++k) {
    const auto cube = cube_from_array(read_source_array(dir / "c.npy"));
    save_cube(cube, dir / ("out" + std::to_string(k)), SaveOptions{"same", std::nullopt, {}});
  }
  save_cube(cube_from_array(read_source_array(dir / "c.npy")), dir / "out0", SaveOptions{"same", std::nullopt, {}});
  EXPECT_EQ(file_bytes(dir / "out0.hsib"), file_bytes(dir / "out1.hsib"));
  EXPECT_EQ(file_bytes(dir / "out0.hsij"), file_bytes(dir / "out1.hsij"));
}
