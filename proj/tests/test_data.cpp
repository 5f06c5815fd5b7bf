#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "revnet/config.hpp"
#include "revnet/data.hpp"

using namespace revnet;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/revnet_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("cifar10 single record with zero pixels") {
  TempFile f("one_record.bin");
  std::vector<std::uint8_t> labels = {7};
  std::vector<std::uint8_t> pixels(kCifarPixels, 0);
  write_cifar10(f.path, labels, pixels);

  auto d = Dataset::cifar10(f.path);
  CHECK(d.size() == 1);
  CHECK(d.raw_labels()[0] == 7);

  // with one all-zero record the mean image equals the record, so the
  // normalized sample is exactly -mean == 0
  auto batch = d.make_batch<double>({0}, Augment::none);
  CHECK(batch.labels[0] == 7);
  for (Index i = 0; i < batch.images.numel(); ++i)
    CHECK(batch.images[i] == 0.0);
}

TEST_CASE("cifar10 mean image subtraction") {
  TempFile f("mean.bin");
  std::vector<std::uint8_t> labels = {1, 3};
  std::vector<std::uint8_t> pixels(2 * kCifarPixels, 0);
  for (Index i = 0; i < kCifarPixels; ++i) pixels[i] = 255;  // record 0 all-ones
  write_cifar10(f.path, labels, pixels);

  auto d = Dataset::cifar10(f.path);
  auto batch = d.make_batch<double>({0, 1}, Augment::none);
  // mean image is 0.5 everywhere; record 0 -> +0.5, record 1 -> -0.5
  for (Index i = 0; i < kCifarPixels; ++i) {
    CHECK(batch.images[i] == doctest::Approx(0.5));
    CHECK(batch.images[kCifarPixels + i] == doctest::Approx(-0.5));
  }
}

TEST_CASE("cifar10 record count must divide the file size") {
  TempFile f("truncated.bin");
  {
    std::ofstream out(f.path, std::ios::binary);
    std::vector<char> bytes(kCifarRecordBytes + 100, 0);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(Dataset::cifar10(f.path),
                       doctest::Contains("byte offset 3073"), IoError);
}

TEST_CASE("cifar10 write/read round trip is bit exact") {
  TempFile f("roundtrip.bin");
  Rng rng(17);
  const Index n = 5;
  std::vector<std::uint8_t> labels(n), pixels(n * kCifarPixels);
  for (auto& L : labels) L = static_cast<std::uint8_t>(rng.raw() % 10);
  for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.raw() & 0xff);

  write_cifar10(f.path, labels, pixels);
  auto d = Dataset::cifar10(f.path);
  REQUIRE(d.size() == n);
  CHECK(d.raw_labels() == labels);
  CHECK(d.raw_pixels() == pixels);
}

TEST_CASE("synthetic dataset is reproducible and balanced") {
  SyntheticSpec spec;
  spec.count = 64;
  spec.classes = 2;
  spec.seed = 99;
  auto d1 = Dataset::synthetic(spec);
  auto d2 = Dataset::synthetic(spec);

  std::vector<Index> idx;
  for (Index i = 0; i < 64; ++i) idx.push_back(i);
  auto b1 = d1.make_batch<double>(idx, Augment::none);
  auto b2 = d2.make_batch<double>(idx, Augment::none);
  for (Index i = 0; i < b1.images.numel(); ++i)
    CHECK(b1.images[i] == b2.images[i]);

  Index ones = 0;
  for (Index L : b1.labels) ones += L;
  CHECK(ones == 32);  // alternating labels
}

TEST_CASE("synthetic classes are separated by the margin") {
  SyntheticSpec spec;
  spec.count = 128;
  spec.margin = 2.0;
  spec.noise = 0.1;
  spec.seed = 7;
  auto d = Dataset::synthetic(spec);
  std::vector<Index> idx = {0, 1};
  auto b = d.make_batch<double>(idx, Augment::none);
  // samples of different classes differ strongly, same class weakly
  double diff01 = 0;
  const Index numel = b.images.numel() / 2;
  for (Index i = 0; i < numel; ++i)
    diff01 += std::abs(b.images[i] - b.images[numel + i]);
  CHECK(diff01 / static_cast<double>(numel) > 1.0);
}

TEST_CASE("augmentation leaves un-augmented batches untouched") {
  SyntheticSpec spec;
  spec.count = 8;
  auto d = Dataset::synthetic(spec);
  Rng rng(3);
  auto plain1 = d.make_batch<double>({0, 1}, Augment::none);
  auto aug = d.make_batch<double>({0, 1}, Augment::crop_flip, &rng);
  auto plain2 = d.make_batch<double>({0, 1}, Augment::none);
  for (Index i = 0; i < plain1.images.numel(); ++i)
    CHECK(plain1.images[i] == plain2.images[i]);
  // and the augmented batch really is different
  double delta = 0;
  for (Index i = 0; i < aug.images.numel(); ++i)
    delta += std::abs(aug.images[i] - plain1.images[i]);
  CHECK(delta > 0.0);
}

TEST_CASE("augmentation demands an rng") {
  SyntheticSpec spec;
  spec.count = 4;
  auto d = Dataset::synthetic(spec);
  CHECK_THROWS_AS(d.make_batch<double>({0}, Augment::crop_flip, nullptr),
                  ShapeError);
}

TEST_CASE("config text parses every key and round trips") {
  const std::string text = R"(
# toy revnet config
family = revnet
bottleneck = false
units = 2,2
channels = 8,8,16
classes = 2
input = 3x8x8
lr = 0.05
momentum = 0.9
weight_decay = 0.0002
batch_size = 32
total_steps = 500
decay_steps = 200,400
decay_factor = 0.1
seed = 1234
precision = f64
angle_interval = 50
engine = reversible
augment = none
data = synthetic
synthetic_margin = 1.5
synthetic_noise = 0.25
synthetic_count = 2048
)";
  auto cfg = parse_config_text(text);
  CHECK(cfg.arch.family == Family::revnet);
  CHECK(cfg.arch.units == std::vector<Index>{2, 2});
  CHECK(cfg.arch.channels == std::vector<Index>{8, 8, 16});
  CHECK(cfg.arch.classes == 2);
  CHECK(cfg.arch.in_height == 8);
  CHECK(cfg.lr == doctest::Approx(0.05));
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.decay_steps == std::vector<Index>{200, 400});
  CHECK(cfg.seed == 1234);
  CHECK(cfg.precision == Precision::f64);
  CHECK(cfg.angle_interval == 50);
  CHECK(cfg.synthetic_margin == doctest::Approx(1.5));
  cfg.validate();

  auto cfg2 = parse_config_text(serialize_config(cfg));
  CHECK(serialize_config(cfg2) == serialize_config(cfg));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_config_text("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("lr = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("family = vgg\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("data = imagenet\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("lr\n"), ConfigError);
}

TEST_CASE("config overrides") {
  auto cfg = parse_config_text("lr = 0.1\n");
  apply_override(cfg, "lr=0.5");
  CHECK(cfg.lr == doctest::Approx(0.5));
  apply_override(cfg, "engine=stored");
  CHECK(cfg.engine == Engine::stored);
  CHECK_THROWS_AS(apply_override(cfg, "nonsense"), ConfigError);
}

TEST_CASE("config validates decay steps against total steps") {
  auto cfg = parse_config_text(
      "units = 1\nchannels = 4,4\nclasses = 2\ninput = 3x8x8\n"
      "total_steps = 100\ndecay_steps = 50,150\n");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
