#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "adaptvig/dataset.hpp"
#include "adaptvig/io.hpp"
#include "adaptvig/train.hpp"
#include "test_support.hpp"

using namespace adaptvig;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& leaf) {
    const fs::path p = fs::temp_directory_path() / "adaptvig_test_train" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("blob generation is deterministic and correctly sized") {
    BlobSpec spec;
    const Dataset a = generate_blobs(spec);
    const Dataset b = generate_blobs(spec);
    CHECK(a.images.shape() == Shape4{200, 3, 16, 16});
    CHECK(a.images.data() == b.images.data());
    CHECK(a.labels == b.labels);

    const fs::path dir = temp_dir("determinism");
    save_dataset(a, dir / "a.avgt", dir / "a.csv");
    save_dataset(b, dir / "b.avgt", dir / "b.csv");
    CHECK(slurp(dir / "a.avgt") == slurp(dir / "b.avgt"));
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    CHECK(fs::file_size(dir / "a.avgt") == 24 + 200ull * 3 * 16 * 16 * 4);

    BlobSpec other = spec;
    other.seed = spec.seed + 1;
    const Dataset c = generate_blobs(other);
    CHECK(a.images.data() != c.images.data());
}

TEST_CASE("dataset file round trip") {
    BlobSpec spec;
    spec.n_samples = 20;
    const Dataset ds = generate_blobs(spec);
    const fs::path dir = temp_dir("roundtrip");
    save_dataset(ds, dir / "d.avgt", dir / "d.csv");
    const Dataset back = load_dataset(dir / "d.avgt", dir / "d.csv");
    CHECK(back.labels == ds.labels);
    CHECK(back.num_classes == 2);
    CHECK(back.images.shape() == ds.images.shape());
    for (std::int64_t i = 0; i < ds.images.numel(); ++i) {
        CHECK(back.images[i] == static_cast<double>(static_cast<float>(ds.images[i])));
    }
}

TEST_CASE("blob classes are linearly separable via pooled-pixel class means") {
    BlobSpec spec;
    const Dataset ds = generate_blobs(spec);
    const Shape4 s = ds.images.shape();

    // pooled per-channel means as features; classify by the nearest class mean
    const int features = s.c;
    std::vector<std::vector<double>> pooled(static_cast<std::size_t>(s.n),
                                            std::vector<double>(features, 0.0));
    for (int i = 0; i < s.n; ++i)
        for (int c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    acc += ds.images.at(i, c, y, x);
                }
            pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
                acc / (s.h * s.w);
        }
    std::vector<std::vector<double>> means(2, std::vector<double>(features, 0.0));
    std::vector<int> counts(2, 0);
    for (int i = 0; i < s.n; ++i) {
        const int label = ds.labels[static_cast<std::size_t>(i)];
        for (int c = 0; c < features; ++c) {
            means[label][static_cast<std::size_t>(c)] +=
                pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
        }
        ++counts[label];
    }
    for (int k = 0; k < 2; ++k)
        for (int c = 0; c < features; ++c) {
            means[k][static_cast<std::size_t>(c)] /= counts[k];
        }
    int correct = 0;
    for (int i = 0; i < s.n; ++i) {
        double d0 = 0.0, d1 = 0.0;
        for (int c = 0; c < features; ++c) {
            const double f = pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            d0 += (f - means[0][static_cast<std::size_t>(c)]) *
                  (f - means[0][static_cast<std::size_t>(c)]);
            d1 += (f - means[1][static_cast<std::size_t>(c)]) *
                  (f - means[1][static_cast<std::size_t>(c)]);
        }
        if ((d0 < d1 ? 0 : 1) == ds.labels[static_cast<std::size_t>(i)]) {
            ++correct;
        }
    }
    CHECK(static_cast<double>(correct) / s.n > 0.99);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
    BlobSpec spec;
    spec.n_samples = 32;
    const Dataset ds = generate_blobs(spec);

    TrainConfig cfg;
    cfg.model = ModelConfig::toy(2, 55);
    cfg.learning_rate = 0.0;
    cfg.steps = 3;
    cfg.batch_size = 8;
    cfg.seed = 55;

    Model model = Model::build(cfg.model);
    const Model reference = Model::build(cfg.model);
    train_model(model, ds, cfg, temp_dir("zero_lr"));
    REQUIRE(model.params().count() == reference.params().count());
    for (std::size_t i = 0; i < model.params().count(); ++i) {
        CHECK(model.params().value(static_cast<int>(i)).data() ==
              reference.params().value(static_cast<int>(i)).data());
    }
}

TEST_CASE("short training run writes complete artifacts and reduces loss") {
    BlobSpec spec;
    const Dataset ds = generate_blobs(spec);

    TrainConfig cfg;
    cfg.model = ModelConfig::toy(2, 7);
    cfg.steps = 30;
    cfg.seed = 7;
    const fs::path dir = temp_dir("short_run");

    Model model = Model::build(cfg.model);
    const TrainResult r = train_model(model, ds, cfg, dir);
    CHECK(std::isfinite(r.final_loss));
    CHECK(r.final_loss < r.initial_loss);
    CHECK(r.steps_run == 30);
    CHECK(r.final_temperatures.size() == model.temperature_params().size());

    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(fs::exists(dir / "params.avgt"));
    CHECK(fs::exists(dir / "params_index.csv"));
    CHECK(fs::exists(dir / "config.json"));

    const std::string metrics = slurp(dir / "metrics.csv");
    CHECK(metrics.rfind("step,loss,accuracy,", 0) == 0);
    // step-0 row plus one row per log interval (and the final step)
    int rows = 0;
    for (char ch : metrics) {
        rows += ch == '\n' ? 1 : 0;
    }
    CHECK(rows == 1 + 1 + 3);  // header, step 0, steps 10/20/30

    const Tensor4 params = read_avgt(dir / "params.avgt");
    CHECK(params.numel() == model.param_count());

    // reruns are byte-identical
    const fs::path dir2 = temp_dir("short_run_again");
    Model model2 = Model::build(cfg.model);
    train_model(model2, ds, cfg, dir2);
    CHECK(slurp(dir / "metrics.csv") == slurp(dir2 / "metrics.csv"));
    CHECK(slurp(dir / "params.avgt") == slurp(dir2 / "params.avgt"));
    CHECK(slurp(dir / "config.json") == slurp(dir2 / "config.json"));
}

TEST_CASE("non-finite loss aborts with the offending step index") {
    BlobSpec spec;
    spec.n_samples = 8;
    const Dataset ds = generate_blobs(spec);

    TrainConfig cfg;
    cfg.model = ModelConfig::toy(2, 3);
    cfg.steps = 5;
    cfg.batch_size = 4;

    Model model = Model::build(cfg.model);
    // poison one weight so the first forward pass overflows
    model.params().value(0)[0] = 1e308;
    try {
        train_model(model, ds, cfg, temp_dir("poison"));
        FAIL("expected non-finite loss abort");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}

TEST_CASE("evaluate reports mean loss and accuracy in range") {
    BlobSpec spec;
    spec.n_samples = 24;
    const Dataset ds = generate_blobs(spec);
    Model model = Model::build(ModelConfig::toy(2, 2));
    const EvalResult ev = evaluate(model, ds, 8);
    CHECK(std::isfinite(ev.loss));
    CHECK(ev.loss > 0.0);
    CHECK(ev.accuracy >= 0.0);
    CHECK(ev.accuracy <= 1.0);
}
