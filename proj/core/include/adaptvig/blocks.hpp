#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adaptvig/attention.hpp"
#include "adaptvig/gating.hpp"
#include "adaptvig/layers.hpp"

namespace adaptvig {

enum class MixerKind { agc, attention };

struct StageConfig {
    int irb_count = 1;
    int mixer_count = 1;
    int channels = 8;
    MixerKind mixer = MixerKind::agc;
    int k = 1;  // local hop distance; meaningful for AGC stages
};

/// Four-stage hybrid configuration. Stage 4 always mixes with attention;
/// stages 1-3 with AGC. Serialized as JSON with keys stages[] {irb_count,
/// mixer_count, channels, mixer, k}, stem_channels, num_classes, ffn_ratio,
/// irb_expansion, seed.
struct ModelConfig {
    std::vector<StageConfig> stages;
    int stem_channels = 8;
    int num_classes = 2;
    double ffn_ratio = 4.0;
    double irb_expansion = 4.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);

    // Stage widths and depths per the published S/M/B configurations,
    // K schedule [8, 4, 2] for stages 1-3.
    static ModelConfig adaptvig_s(int num_classes = 1000);
    static ModelConfig adaptvig_m(int num_classes = 1000);
    static ModelConfig adaptvig_b(int num_classes = 1000);

    /// Desk-scale config for 3x16x16 inputs, well under 100k parameters.
    /// Stage 3 runs at 1x1 after the stem and downsamples, where no K is
    /// valid, so it carries IRBs only.
    static ModelConfig toy(int num_classes = 2, std::uint64_t seed = 0);
};

// ---- blocks -------------------------------------------------------------------

struct Stem {
    ConvBlock conv1, conv2;  // both 3x3 stride 2; spatial dims quartered
};

struct Irb {
    ConvBlock expand;   // 1x1, c -> hidden
    ConvBlock dw;       // depthwise 3x3
    Conv2d project;     // 1x1, hidden -> c
    Norm project_norm;
};

struct Cpe {
    Conv2d dw;  // depthwise 3x3, added residually
};

struct Ffn {
    Conv2d expand;   // 1x1, c -> hidden
    Conv2d project;  // 1x1, hidden -> c
};

/// CPE -> 1x1 conv -> mixer (AGC or attention) -> FFN, with residuals around
/// the conv+mixer path and inside the FFN.
struct MixerBlock {
    MixerKind kind = MixerKind::agc;
    Cpe cpe;
    Conv2d fc;
    AgcMixer agc;
    AttentionMixer attention;
    Ffn ffn;
};

struct Downsample {
    ConvBlock conv;  // 3x3 stride 2, channel change
};

struct Head {
    Conv2d fc;  // 1x1 on the pooled (n,c,1,1) features
};

Stem add_stem(ParamStore& store, Rng& rng, const std::string& name, int in_c, int out_c);
Irb add_irb(ParamStore& store, Rng& rng, const std::string& name, int channels, double expansion);
Cpe add_cpe(ParamStore& store, Rng& rng, const std::string& name, int channels);
Ffn add_ffn(ParamStore& store, Rng& rng, const std::string& name, int channels, double ratio);
MixerBlock add_mixer_block(ParamStore& store, Rng& rng, const std::string& name, int channels,
                           MixerKind kind, const AGCConfig& cfg, double ffn_ratio);
Downsample add_downsample(ParamStore& store, Rng& rng, const std::string& name, int in_c,
                          int out_c);
Head add_head(ParamStore& store, Rng& rng, const std::string& name, int channels,
              int num_classes);

Var stem_forward(const Stem& stem, std::span<const Var> p, const Var& x);
Var irb_forward(const Irb& irb, std::span<const Var> p, const Var& x);
Var cpe_forward(const Cpe& cpe, std::span<const Var> p, const Var& x);
Var ffn_forward(const Ffn& ffn, std::span<const Var> p, const Var& x);
Var mixer_block_forward(const MixerBlock& block, std::span<const Var> p, const Var& x);
Var downsample_forward(const Downsample& down, std::span<const Var> p, const Var& x);
Var head_forward(const Head& head, std::span<const Var> p, const Var& x);

// ---- model --------------------------------------------------------------------

struct Stage {
    std::vector<Irb> irbs;
    std::vector<MixerBlock> mixers;
    bool has_downsample = false;
    Downsample down;
};

class Model {
public:
    static Model build(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const Stem& stem() const { return stem_; }
    const std::vector<Stage>& stages() const { return stages_; }
    const Head& head() const { return head_; }

    /// stem -> per-stage IRBs then mixer blocks then downsample (none after
    /// stage 4) -> pooled head. Logits shape (n, num_classes, 1, 1).
    Var forward(Tape& tape, std::span<const Var> p, const Var& input) const;

    /// Inference on the stored parameters; no gradients recorded.
    Tensor4 forward_infer(const Tensor4& input) const;

    std::int64_t param_count() const { return store_.scalar_count(); }

    /// Store indices of every per-block temperature, in forward order.
    std::vector<int> temperature_params() const;

private:
    ModelConfig config_;
    ParamStore store_;
    Stem stem_;
    std::vector<Stage> stages_;
    Head head_;
};

}  // namespace adaptvig
