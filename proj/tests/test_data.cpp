#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "catch_amalgamated.hpp"

#include "advdist/data/adt1.hpp"
#include "advdist/data/synthetic.hpp"

using namespace advdist;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("advdist_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset random_dataset(Rng& rng) {
  const ImageShape shape{1 + uniform_index(rng, 4), 1 + uniform_index(rng, 4), 1 + uniform_index(rng, 3)};
  const std::size_t n = 1 + uniform_index(rng, 6);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> px(shape.size());
    for (auto& v : px) v = static_cast<float>(uniform01(rng));
    d.images.emplace_back(shape, std::move(px));
  }
  d.ids = Dataset::positional_ids(n);
  if (uniform01(rng) < 0.5) {
    // sparse, non-positional ids go through the companion file
    for (auto& id : d.ids) id = id * 7 + 3;
  }
  if (uniform01(rng) < 0.5) {
    std::vector<Label> labels(n);
    for (auto& l : labels) l = static_cast<Label>(uniform_index(rng, 3));
    d.true_labels = labels;
  }
  return d;
}

double mean_pixel(const Dataset& d) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& img : d.images)
    for (float v : img.pixels()) {
      s += v;
      ++n;
    }
  return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("image tensor rejects out-of-range pixels and bad sizes") {
  CHECK_THROWS_AS(ImageTensor({2, 2, 1}, {0.f, 0.f, 0.f}), ShapeError);
  CHECK_THROWS_AS(ImageTensor({2, 2, 1}, {0.f, 0.f, 0.f, 1.5f}), ValidationError);
  CHECK_THROWS_AS(ImageTensor({2, 2, 1}, {0.f, 0.f, 0.f, std::nanf("")}), ValidationError);
  CHECK_THROWS_AS(ImageTensor({0, 2, 1}, {}), ValidationError);
  ImageTensor ok({1, 2, 2}, {0.f, 0.25f, 0.5f, 1.f});
  CHECK(ok.at(0, 1, 0) == 0.5f);
}

TEST_CASE("dataset validation catches duplicate ids and mixed shapes") {
  Dataset d;
  d.images = {ImageTensor::filled({2, 2, 1}, 0.1f), ImageTensor::filled({2, 2, 1}, 0.2f)};
  d.ids = {4, 4};
  CHECK_THROWS_AS(d.validate(), ValidationError);
  d.ids = {4, 5};
  d.validate();
  d.images.push_back(ImageTensor::filled({2, 1, 1}, 0.1f));
  d.ids.push_back(6);
  CHECK_THROWS_AS(d.validate(), ShapeError);
}

TEST_CASE("ADT1 payload for a single 2x2x1 image of 0.25") {
  Dataset d;
  d.images = {ImageTensor::filled({2, 2, 1}, 0.25f)};
  d.ids = {0};
  const std::string bytes = encode_adt1(d);
  REQUIRE(bytes.size() == kAdt1HeaderBytes + 16);
  CHECK(bytes.substr(0, 4) == "ADT1");
  const unsigned char expect_header[] = {1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0};
  CHECK(std::memcmp(bytes.data() + 4, expect_header, sizeof expect_header) == 0);
  // 0.25f is 0x3e800000, stored little-endian
  for (int i = 0; i < 4; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kAdt1HeaderBytes + 4 * i;
    CHECK(p[0] == 0x00);
    CHECK(p[1] == 0x00);
    CHECK(p[2] == 0x80);
    CHECK(p[3] == 0x3e);
  }

  const auto dir = scratch_dir("payload");
  write_dataset(d, (dir / "one.adt1").string());
  CHECK(slurp(dir / "one.adt1") == bytes);
  CHECK_FALSE(fs::exists(dir / "one.adt1.ids.csv"));
}

TEST_CASE("ADT1 reader rejects malformed files with an offset") {
  Dataset d;
  d.images = {ImageTensor::filled({2, 2, 1}, 0.25f)};
  d.ids = {0};
  d.true_labels = std::vector<Label>{1};
  std::string good = encode_adt1(d);

  std::string bad_magic = good;
  bad_magic.replace(0, 4, "XXXX");
  CHECK_THROWS_AS(decode_adt1(bad_magic), FormatError);
  CHECK_THROWS_WITH(decode_adt1(bad_magic), Catch::Matchers::ContainsSubstring("offset 0"));

  CHECK_THROWS_AS(decode_adt1(good.substr(0, 10)), FormatError);
  CHECK_THROWS_AS(decode_adt1(good.substr(0, good.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_adt1(good + "x"), FormatError);

  std::string out_of_range = good;
  const auto two = std::bit_cast<std::uint32_t>(2.0f);
  const std::size_t px_off = kAdt1HeaderBytes + 4;
  for (int i = 0; i < 4; ++i) out_of_range[px_off + i] = static_cast<char>((two >> (8 * i)) & 0xff);
  CHECK_THROWS_WITH(decode_adt1(out_of_range),
                    Catch::Matchers::ContainsSubstring("offset " + std::to_string(px_off)));

  const auto dir = scratch_dir("bad");
  {
    std::ofstream f(dir / "bad.adt1", std::ios::binary);
    f << bad_magic;
  }
  CHECK_THROWS_AS(read_dataset((dir / "bad.adt1").string()), FormatError);
  CHECK_THROWS_AS(read_dataset((dir / "missing.adt1").string()), IoError);
}

TEST_CASE("write then read reproduces random datasets") {
  const auto dir = scratch_dir("roundtrip");
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Dataset d = random_dataset(rng);
    const auto path = (dir / ("d" + std::to_string(trial) + ".adt1")).string();
    write_dataset(d, path);
    const Dataset back = read_dataset(path);
    CHECK(back == d);
    CHECK(encode_adt1(back) == encode_adt1(d));
  }
}

TEST_CASE("label csv round trip") {
  const auto dir = scratch_dir("labels");
  Dataset d;
  d.images = {ImageTensor::filled({1, 1, 1}, 0.f), ImageTensor::filled({1, 1, 1}, 1.f)};
  d.ids = {10, 20};
  d.true_labels = std::vector<Label>{1, 0};
  write_label_csv(d, (dir / "l.csv").string());
  const auto m = read_label_csv((dir / "l.csv").string());
  CHECK(m == std::map<InstanceId, Label>{{10, 1}, {20, 0}});
}

TEST_CASE("synthetic benchmark is a pure function of its spec") {
  SyntheticSpec spec;
  spec.n_train = 200;
  spec.n_val = 50;
  spec.n_eval = 100;
  spec.seed = 7;
  const auto a = generate_synthetic_benchmark(spec);
  const auto b = generate_synthetic_benchmark(spec);
  CHECK(encode_adt1(a.train) == encode_adt1(b.train));
  CHECK(encode_adt1(a.val) == encode_adt1(b.val));
  CHECK(encode_adt1(a.eval) == encode_adt1(b.eval));
  CHECK(a.eval.has_labels());
  CHECK(a.eval.shape() == ImageShape{16, 16, 1});

  spec.seed = 8;
  const auto c = generate_synthetic_benchmark(spec);
  CHECK(encode_adt1(c.eval) != encode_adt1(a.eval));
}

TEST_CASE("bias mechanism removes the low-brightness class-0 subgroup from train only") {
  SyntheticSpec spec;
  spec.n_train = 400;
  spec.n_val = 100;
  spec.n_eval = 400;
  spec.seed = 3;
  spec.mechanism = Mechanism::bias;
  spec.bias_fraction = 1.0;
  const auto b = generate_synthetic_benchmark(spec);
  std::size_t removed_in_train = 0, removed_in_eval = 0;
  for (std::size_t i = 0; i < b.train.size(); ++i)
    if ((*b.train.true_labels)[i] == 0 && !b.train_bright[i]) ++removed_in_train;
  for (std::size_t i = 0; i < b.eval.size(); ++i)
    if ((*b.eval.true_labels)[i] == 0 && !b.eval_bright[i]) ++removed_in_eval;
  CHECK(removed_in_train == 0);
  CHECK(removed_in_eval > 0);
  CHECK(b.train.size() < spec.n_train);
  CHECK(b.train.has_positional_ids());

  spec.mechanism = Mechanism::none;
  const auto plain = generate_synthetic_benchmark(spec);
  CHECK(plain.train.size() == spec.n_train);
  CHECK(encode_adt1(plain.eval) == encode_adt1(b.eval));
}

TEST_CASE("partial bias keeps roughly the complementary fraction") {
  SyntheticSpec spec;
  spec.n_train = 4000;
  spec.n_val = 10;
  spec.n_eval = 10;
  spec.seed = 5;
  const auto plain = generate_synthetic_benchmark(spec);
  std::size_t subgroup = 0;
  for (std::size_t i = 0; i < plain.train.size(); ++i)
    if ((*plain.train.true_labels)[i] == 0 && !plain.train_bright[i]) ++subgroup;
  spec.mechanism = Mechanism::bias;
  spec.bias_fraction = 0.5;
  const auto half = generate_synthetic_benchmark(spec);
  const double dropped = static_cast<double>(plain.train.size() - half.train.size());
  // binomial(subgroup, 0.5): allow 4 standard deviations
  const double sd = std::sqrt(subgroup * 0.25);
  CHECK(std::abs(dropped - 0.5 * subgroup) < 4.0 * sd);
}

TEST_CASE("shift mechanism dims eval pixels by the factor") {
  SyntheticSpec spec;
  spec.n_train = 50;
  spec.n_val = 20;
  spec.n_eval = 300;
  spec.seed = 7;
  const auto plain = generate_synthetic_benchmark(spec);
  spec.mechanism = Mechanism::shift;
  spec.shift_factor = 0.5;
  const auto shifted = generate_synthetic_benchmark(spec);
  CHECK(mean_pixel(shifted.eval) == Catch::Approx(0.5 * mean_pixel(plain.eval)).epsilon(1e-6));
  CHECK(encode_adt1(shifted.train) == encode_adt1(plain.train));
  CHECK(encode_adt1(shifted.val) == encode_adt1(plain.val));
}

TEST_CASE("overfit mechanism only raises the overtrain flag") {
  SyntheticSpec spec;
  spec.n_train = 50;
  spec.n_val = 20;
  spec.n_eval = 30;
  spec.seed = 1;
  const auto plain = generate_synthetic_benchmark(spec);
  spec.mechanism = Mechanism::overfit;
  const auto over = generate_synthetic_benchmark(spec);
  CHECK(over.overtrain);
  CHECK_FALSE(plain.overtrain);
  CHECK(over.train == plain.train);
  CHECK(over.eval == plain.eval);
}

TEST_CASE("invalid synthetic specs are rejected") {
  SyntheticSpec spec;
  spec.n_eval = 0;
  CHECK_THROWS_AS(generate_synthetic_benchmark(spec), ValidationError);
  spec = {};
  spec.noise_sd = -1.0;
  CHECK_THROWS_AS(generate_synthetic_benchmark(spec), ValidationError);
  spec = {};
  spec.bias_fraction = 1.5;
  CHECK_THROWS_AS(generate_synthetic_benchmark(spec), ValidationError);
  CHECK_THROWS_AS(parse_mechanism("blur"), ValidationError);
  CHECK(parse_mechanism(to_string(Mechanism::shift)) == Mechanism::shift);
}
