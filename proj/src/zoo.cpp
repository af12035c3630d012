#include "xinv/zoo.hpp"

#include "xinv/errors.hpp"

namespace xinv {

const char* arch_name(InversionArch a) {
  switch (a) {
    case InversionArch::prediction_only: return "prediction_only";
    case InversionArch::flatten: return "flatten";
    case InversionArch::cnn: return "cnn";
    case InversionArch::unet: return "unet";
    case InversionArch::flatten_unet: return "flatten_unet";
  }
  return "?";
}

InversionArch parse_arch(const std::string& s) {
  if (s == "prediction_only") return InversionArch::prediction_only;
  if (s == "flatten") return InversionArch::flatten;
  if (s == "cnn") return InversionArch::cnn;
  if (s == "unet") return InversionArch::unet;
  if (s == "flatten_unet") return InversionArch::flatten_unet;
  throw validation_error("unknown inversion method '" + s + "'");
}

namespace zoo {

namespace {

// Channel ladder shared by the supplementary tables: feature maps of spatial
// size s carry 4096/s channels (1024@4x4, 512@8x8, 256@16x16, 128@32x32,
// 64@64x64) in both the encoders and the TCNN decoders.
int ladder(int s) { return 4096 / s; }

// Widest explanation a flatten branch accepts. Table 8's image-sized input
// (128^2) is the largest the paper flattens; wider stacks (e.g. the 256-map
// partial-CAM tensor) would square into billions of fc parameters.
constexpr int kFlattenCap = 128 * 128;

void add(ModelSpec& m, LayerSpec l) { m.layers.push_back(std::move(l)); }

LayerSpec conv(const std::string& name, int out, Act act = Act::relu) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::conv;
  l.kernel = 3;
  l.stride = 1;
  l.padding = 1;
  l.out_channels = out;
  l.act = act;
  return l;
}

LayerSpec pool(const std::string& name) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::pool;
  l.kernel = 2;
  l.stride = 2;
  return l;
}

LayerSpec fc(const std::string& name, int width, Act act = Act::relu) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::fc;
  l.out_channels = width;
  l.act = act;
  return l;
}

LayerSpec upsample(const std::string& name, int out, bool seed, Act act = Act::relu) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::upsample;
  l.kernel = 4;
  l.stride = seed ? 1 : 2;
  l.padding = seed ? 0 : 1;
  l.out_channels = out;
  l.act = act;
  return l;
}

// TCNN decoder: seed upsample to 4x4, stride-2 doubling to `out_hw`, each
// stage followed by a 3x3 conv; the final stage emits `out_c` channels and
// stays linear (reconstructions are clamped at emission, not in-graph).
// Keeping relu off the last upsample matters: with few output channels a
// relu'd pre-output layer can die wholesale and freeze the decoder.
void add_decoder(ModelSpec& m, int out_hw, int out_c, bool bypass_all) {
  for (int s = 4; s <= out_hw; s *= 2) {
    bool last = s == out_hw;
    int ch = last ? out_c : ladder(s);
    add(m, upsample("dec_up_" + std::to_string(s), ch, s == 4,
                    last ? Act::none : Act::relu));
    LayerSpec c = conv("dec_conv_" + std::to_string(s), ch, last ? Act::none : Act::relu);
    std::string enc = "enc_conv_" + std::to_string(s);
    bool enc_exists = false;
    for (const auto& l : m.layers) enc_exists |= l.name == enc;
    if (bypass_all && enc_exists) c.bypass = enc;
    add(m, c);
  }
}

// Convolutional explanation encoder: halve spatial size down to 2x2, then
// fc 64. The top conv keeps 1 output channel when the explanation is
// image-sized (table 8); CAM-sized explanations start on the ladder
// (table 6).
void add_encoder(ModelSpec& m, const std::string& input, int e_hw, bool image_sized) {
  std::string prev = input;
  for (int s = e_hw; s >= 4; s /= 2) {
    LayerSpec c = conv("enc_conv_" + std::to_string(s),
                       (image_sized && s == e_hw) ? 1 : ladder(s));
    c.from = {prev};
    add(m, c);
    add(m, pool("enc_pool_" + std::to_string(s)));
    prev = "enc_pool_" + std::to_string(s);
  }
  LayerSpec f = fc("enc_fc", 64);
  f.from = {prev};
  add(m, f);
}

}  // namespace

DatasetProfile mnist() { return {"mnist", 32, 1, 10}; }
DatasetProfile icv(int class_count) { return {"icv", 128, 1, class_count}; }
DatasetProfile celeba(int class_count) { return {"celeba", 256, 1, class_count}; }

ModelSpec target(const DatasetProfile& p) {
  ModelSpec m;
  m.name = p.name + "_target";
  m.class_count = p.class_count;
  m.inputs = {{"image", {p.channels, p.image_hw, p.image_hw}}};
  int stages;
  switch (p.image_hw) {
    case 32: stages = 2; break;
    case 128: stages = 3; break;
    case 256: stages = 4; break;
    default:
      throw validation_error("no target table for " + std::to_string(p.image_hw) + "px inputs");
  }
  for (int i = 0; i < stages; ++i) {
    add(m, conv("conv" + std::to_string(i + 1), 128 << i));
    add(m, pool("pool" + std::to_string(i + 1)));
  }
  add(m, fc("fc1", stages == 4 ? 1024 : 512));
  add(m, fc("fc2", p.class_count, Act::softmax));
  return m;
}

ModelSpec inversion(InversionArch arch, const DatasetProfile& p, Shape3 expl,
                    const std::string& label) {
  ModelSpec m;
  m.name = p.name + "_" + arch_name(arch) + (label.empty() ? "" : "_" + label);
  m.inputs = {{"y", {p.class_count, 1, 1}}};
  bool wants_expl = arch != InversionArch::prediction_only;
  if (wants_expl) {
    if (expl.numel() <= 0)
      throw validation_error(std::string(arch_name(arch)) + " requires an explanation input");
    m.inputs.push_back({"E", expl});
  } else if (expl.numel() > 0) {
    expl = {};  // prediction_only ignores explanations by construction
  }

  bool flat_branch = arch == InversionArch::flatten || arch == InversionArch::flatten_unet;
  if (flat_branch && expl.numel() > kFlattenCap)
    throw validation_error("flatten branch over " + std::to_string(kFlattenCap) +
                           " explanation values (" + std::to_string(expl.numel()) +
                           "); use cnn/unet for wide stacks");

  switch (arch) {
    case InversionArch::prediction_only: {
      LayerSpec f = fc("fc_seed", p.class_count);
      f.from = {"y"};
      add(m, f);
      break;
    }
    case InversionArch::flatten: {
      LayerSpec f = fc("fc_merge", int(p.class_count + expl.numel()));
      f.from = {"y", "E"};
      add(m, f);
      break;
    }
    case InversionArch::cnn:
    case InversionArch::unet: {
      add_encoder(m, "E", int(expl.h), expl.h == p.image_hw);
      LayerSpec f = fc("fc_merge", p.class_count + 64);
      f.from = {"y", "enc_fc"};
      add(m, f);
      break;
    }
    case InversionArch::flatten_unet: {
      add_encoder(m, "E", int(expl.h), expl.h == p.image_hw);
      LayerSpec f = fc("fc_merge", int(p.class_count + 64 + expl.numel()));
      f.from = {"y", "enc_fc", "E"};
      add(m, f);
      break;
    }
  }
  bool bypass = arch == InversionArch::unet || arch == InversionArch::flatten_unet;
  add_decoder(m, p.image_hw, p.channels, bypass);
  return m;
}

ModelSpec explanation_inverter(const DatasetProfile& p, Shape3 cam) {
  if (cam.h != cam.w || cam.h < 4 || (cam.h & (cam.h - 1)))
    throw validation_error("explanation inverter needs a square power-of-two CAM, got " +
                           cam.str());
  ModelSpec m;
  m.name = p.name + "_expl_inverter";
  m.inputs = {{"y", {p.class_count, 1, 1}}};
  LayerSpec f = fc("fc_seed", p.class_count);
  f.from = {"y"};
  add(m, f);
  add_decoder(m, int(cam.h), int(cam.c), false);
  return m;
}

}  // namespace zoo

}  // namespace xinv
