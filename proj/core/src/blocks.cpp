#include "adaptvig/blocks.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace adaptvig {

namespace {

int hidden_width(int channels, double ratio) {
    const int h = static_cast<int>(std::lround(channels * ratio));
    return h < 1 ? 1 : h;
}

std::string mixer_name(MixerKind kind) {
    return kind == MixerKind::agc ? "agc" : "attention";
}

MixerKind mixer_from_name(const std::string& s) {
    if (s == "agc") {
        return MixerKind::agc;
    }
    if (s == "attention") {
        return MixerKind::attention;
    }
    throw std::invalid_argument("ModelConfig: unknown mixer kind '" + s + "'");
}

}  // namespace

void ModelConfig::validate() const {
    if (stages.size() != 4) {
        throw std::invalid_argument("ModelConfig: exactly 4 stages required, got " +
                                    std::to_string(stages.size()));
    }
    if (stages.back().mixer != MixerKind::attention) {
        throw std::invalid_argument("ModelConfig: stage 4 must use the attention mixer");
    }
    for (std::size_t i = 0; i + 1 < stages.size(); ++i) {
        if (stages[i].mixer == MixerKind::attention) {
            throw std::invalid_argument("ModelConfig: attention is legal only in the last stage");
        }
        if (stages[i].channels > stages[i + 1].channels) {
            throw std::invalid_argument("ModelConfig: channels must be nondecreasing");
        }
    }
    for (const StageConfig& s : stages) {
        if (s.irb_count < 0 || s.mixer_count < 0 || s.channels < 1) {
            throw std::invalid_argument("ModelConfig: invalid stage counts/channels");
        }
        if (s.mixer == MixerKind::agc && s.mixer_count > 0 && s.k < 1) {
            throw std::invalid_argument("ModelConfig: AGC stages need k >= 1");
        }
    }
    if (stem_channels != stages.front().channels) {
        throw std::invalid_argument("ModelConfig: stem_channels must equal stage-1 channels");
    }
    if (num_classes < 1) {
        throw std::invalid_argument("ModelConfig: num_classes must be >= 1");
    }
    if (ffn_ratio <= 0.0 || irb_expansion <= 0.0) {
        throw std::invalid_argument("ModelConfig: expansion ratios must be positive");
    }
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["stages"] = nlohmann::json::array();
    for (const StageConfig& s : stages) {
        j["stages"].push_back({{"irb_count", s.irb_count},
                               {"mixer_count", s.mixer_count},
                               {"channels", s.channels},
                               {"mixer", mixer_name(s.mixer)},
                               {"k", s.k}});
    }
    j["stem_channels"] = stem_channels;
    j["num_classes"] = num_classes;
    j["ffn_ratio"] = ffn_ratio;
    j["irb_expansion"] = irb_expansion;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.stages.clear();
    for (const auto& js : j.at("stages")) {
        StageConfig s;
        s.irb_count = js.at("irb_count").get<int>();
        s.mixer_count = js.at("mixer_count").get<int>();
        s.channels = js.at("channels").get<int>();
        s.mixer = mixer_from_name(js.at("mixer").get<std::string>());
        s.k = js.value("k", 1);
        cfg.stages.push_back(s);
    }
    cfg.stem_channels = j.at("stem_channels").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.ffn_ratio = j.value("ffn_ratio", 4.0);
    cfg.irb_expansion = j.value("irb_expansion", 4.0);
    cfg.seed = j.value("seed", static_cast<std::uint64_t>(0));
    cfg.validate();
    return cfg;
}

namespace {

ModelConfig make_named_config(std::vector<StageConfig> stages, int num_classes) {
    ModelConfig cfg;
    cfg.stages = std::move(stages);
    cfg.stem_channels = cfg.stages.front().channels;
    cfg.num_classes = num_classes;
    cfg.validate();
    return cfg;
}

}  // namespace

ModelConfig ModelConfig::adaptvig_s(int num_classes) {
    return make_named_config({{3, 3, 32, MixerKind::agc, 8},
                              {3, 3, 64, MixerKind::agc, 4},
                              {9, 3, 128, MixerKind::agc, 2},
                              {3, 3, 256, MixerKind::attention, 0}},
                             num_classes);
}

ModelConfig ModelConfig::adaptvig_m(int num_classes) {
    return make_named_config({{4, 4, 48, MixerKind::agc, 8},
                              {4, 4, 96, MixerKind::agc, 4},
                              {12, 4, 192, MixerKind::agc, 2},
                              {4, 4, 320, MixerKind::attention, 0}},
                             num_classes);
}

ModelConfig ModelConfig::adaptvig_b(int num_classes) {
    return make_named_config({{5, 5, 48, MixerKind::agc, 8},
                              {5, 5, 96, MixerKind::agc, 4},
                              {15, 5, 192, MixerKind::agc, 2},
                              {5, 5, 384, MixerKind::attention, 0}},
                             num_classes);
}

ModelConfig ModelConfig::toy(int num_classes, std::uint64_t seed) {
    ModelConfig cfg = make_named_config({{1, 1, 8, MixerKind::agc, 1},
                                         {1, 1, 16, MixerKind::agc, 1},
                                         {1, 0, 24, MixerKind::agc, 1},
                                         {1, 1, 32, MixerKind::attention, 0}},
                                        num_classes);
    cfg.seed = seed;
    return cfg;
}

// ---- block construction ---------------------------------------------------------

Stem add_stem(ParamStore& store, Rng& rng, const std::string& name, int in_c, int out_c) {
    Stem stem;
    stem.conv1 = add_conv_block(store, rng, name + ".conv1", in_c, out_c, 3, 2);
    stem.conv2 = add_conv_block(store, rng, name + ".conv2", out_c, out_c, 3, 2);
    return stem;
}

Irb add_irb(ParamStore& store, Rng& rng, const std::string& name, int channels, double expansion) {
    const int hidden = hidden_width(channels, expansion);
    Irb irb;
    irb.expand = add_conv_block(store, rng, name + ".expand", channels, hidden, 1);
    irb.dw = add_conv_block(store, rng, name + ".dw", hidden, hidden, 3, 1, hidden);
    irb.project = add_conv2d(store, rng, name + ".project", hidden, channels, 1);
    irb.project_norm = add_norm(store, name + ".project_norm", channels);
    return irb;
}

Cpe add_cpe(ParamStore& store, Rng& rng, const std::string& name, int channels) {
    Cpe cpe;
    cpe.dw = add_conv2d(store, rng, name + ".dw", channels, channels, 3, 1, channels);
    return cpe;
}

Ffn add_ffn(ParamStore& store, Rng& rng, const std::string& name, int channels, double ratio) {
    const int hidden = hidden_width(channels, ratio);
    Ffn ffn;
    ffn.expand = add_conv2d(store, rng, name + ".expand", channels, hidden, 1);
    ffn.project = add_conv2d(store, rng, name + ".project", hidden, channels, 1);
    return ffn;
}

MixerBlock add_mixer_block(ParamStore& store, Rng& rng, const std::string& name, int channels,
                           MixerKind kind, const AGCConfig& cfg, double ffn_ratio) {
    MixerBlock block;
    block.kind = kind;
    block.cpe = add_cpe(store, rng, name + ".cpe", channels);
    block.fc = add_conv2d(store, rng, name + ".fc", channels, channels, 1);
    if (kind == MixerKind::agc) {
        block.agc = add_agc_mixer(store, rng, name + ".agc", channels, cfg);
    } else {
        block.attention = add_attention_mixer(store, rng, name + ".attn", channels);
    }
    block.ffn = add_ffn(store, rng, name + ".ffn", channels, ffn_ratio);
    return block;
}

Downsample add_downsample(ParamStore& store, Rng& rng, const std::string& name, int in_c,
                          int out_c) {
    Downsample down;
    down.conv = add_conv_block(store, rng, name + ".conv", in_c, out_c, 3, 2);
    return down;
}

Head add_head(ParamStore& store, Rng& rng, const std::string& name, int channels,
              int num_classes) {
    if (num_classes < 1) {
        throw std::invalid_argument("add_head: class count must be >= 1");
    }
    Head head;
    head.fc = add_conv2d(store, rng, name + ".fc", channels, num_classes, 1);
    return head;
}

// ---- forward passes ---------------------------------------------------------------

Var stem_forward(const Stem& stem, std::span<const Var> p, const Var& x) {
    const Shape4 s = x.shape();
    if (s.h < 4 || s.w < 4) {
        throw std::invalid_argument("stem_forward: input must be at least 4x4, got " + s.str());
    }
    return stem.conv2.forward(p, stem.conv1.forward(p, x));
}

Var irb_forward(const Irb& irb, std::span<const Var> p, const Var& x) {
    Var y = irb.expand.forward(p, x);
    y = irb.dw.forward(p, y);
    y = irb.project.forward(p, y);
    y = irb.project_norm.forward(p, y);
    return add(y, x);
}

Var cpe_forward(const Cpe& cpe, std::span<const Var> p, const Var& x) {
    return add(x, cpe.dw.forward(p, x));
}

Var ffn_forward(const Ffn& ffn, std::span<const Var> p, const Var& x) {
    Var y = gelu(ffn.expand.forward(p, x));
    y = ffn.project.forward(p, y);
    return add(y, x);
}

Var mixer_block_forward(const MixerBlock& block, std::span<const Var> p, const Var& x) {
    Var y = cpe_forward(block.cpe, p, x);
    Var mixed = block.fc.forward(p, y);
    mixed = block.kind == MixerKind::agc ? agc_forward(block.agc, p, mixed)
                                         : attention_forward(block.attention, p, mixed);
    Var z = add(y, mixed);
    return ffn_forward(block.ffn, p, z);
}

Var downsample_forward(const Downsample& down, std::span<const Var> p, const Var& x) {
    return down.conv.forward(p, x);
}

Var head_forward(const Head& head, std::span<const Var> p, const Var& x) {
    return head.fc.forward(p, global_avg_pool(x));
}

// ---- model -------------------------------------------------------------------------

Model Model::build(const ModelConfig& config) {
    config.validate();
    Model model;
    model.config_ = config;
    Rng rng(config.seed);

    model.stem_ = add_stem(model.store_, rng, "stem", 3, config.stem_channels);
    for (std::size_t si = 0; si < config.stages.size(); ++si) {
        const StageConfig& sc = config.stages[si];
        const std::string prefix = "stage" + std::to_string(si + 1);
        Stage stage;
        for (int i = 0; i < sc.irb_count; ++i) {
            stage.irbs.push_back(add_irb(model.store_, rng, prefix + ".irb" + std::to_string(i),
                                         sc.channels, config.irb_expansion));
        }
        AGCConfig agc_cfg;
        agc_cfg.k = sc.k;
        for (int i = 0; i < sc.mixer_count; ++i) {
            stage.mixers.push_back(add_mixer_block(model.store_, rng,
                                                   prefix + ".mixer" + std::to_string(i),
                                                   sc.channels, sc.mixer, agc_cfg,
                                                   config.ffn_ratio));
        }
        if (si + 1 < config.stages.size()) {
            stage.has_downsample = true;
            stage.down = add_downsample(model.store_, rng, prefix + ".down", sc.channels,
                                        config.stages[si + 1].channels);
        }
        model.stages_.push_back(std::move(stage));
    }
    model.head_ = add_head(model.store_, rng, "head", config.stages.back().channels,
                           config.num_classes);
    return model;
}

Var Model::forward(Tape& tape, std::span<const Var> p, const Var& input) const {
    (void)tape;
    Var v = stem_forward(stem_, p, input);
    for (const Stage& stage : stages_) {
        for (const Irb& irb : stage.irbs) {
            v = irb_forward(irb, p, v);
        }
        for (const MixerBlock& block : stage.mixers) {
            v = mixer_block_forward(block, p, v);
        }
        if (stage.has_downsample) {
            v = downsample_forward(stage.down, p, v);
        }
    }
    return head_forward(head_, p, v);
}

Tensor4 Model::forward_infer(const Tensor4& input) const {
    Tape tape;
    std::vector<Var> p;
    p.reserve(store_.count());
    for (std::size_t i = 0; i < store_.count(); ++i) {
        p.push_back(tape.constant(store_.value(static_cast<int>(i))));
    }
    Var out = forward(tape, p, tape.constant(input));
    return out.value();
}

std::vector<int> Model::temperature_params() const {
    std::vector<int> out;
    for (const Stage& stage : stages_) {
        for (const MixerBlock& block : stage.mixers) {
            if (block.kind == MixerKind::agc) {
                out.push_back(block.agc.temperature);
            }
        }
    }
    return out;
}

}  // namespace adaptvig
