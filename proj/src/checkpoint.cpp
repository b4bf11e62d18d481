#include "aamulet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace aamulet {

namespace {

constexpr char kMagic[4] = {'A', 'A', 'M', 'U'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& path;
  std::ifstream in;
  std::size_t pos = 0;

  explicit Reader(const std::string& p)
      : path(p), in(p, std::ios::binary) {
    if (!in) throw CheckpointError("cannot open checkpoint " + p);
  }
  void read(void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), std::streamsize(n));
    if (std::size_t(in.gcount()) != n)
      throw CheckpointError(path + ": truncated at byte offset " +
                            std::to_string(pos));
    pos += n;
  }
  std::uint16_t u16() {
    std::uint8_t b[2];
    read(b, 2);
    return std::uint16_t(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    read(b, 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
           (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void append_tensor(std::string& out, const std::string& name, Shape shape,
                   const std::vector<float>& data) {
  put_u16(out, std::uint16_t(name.size()));
  out += name;
  out.push_back(char(4));  // rank
  put_u32(out, std::uint32_t(shape.n));
  put_u32(out, std::uint32_t(shape.c));
  put_u32(out, std::uint32_t(shape.h));
  put_u32(out, std::uint32_t(shape.w));
  for (float v : data) put_f32(out, v);
}

std::vector<float> flat(std::initializer_list<float> xs) { return xs; }

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const NetworkConfig& config, const OptimState* optim) {
  std::vector<NamedTensor> tensors;
  tensors.push_back({"cfg.geometry",
                     Shape{1, 1, 1, 4},
                     flat({float(config.levels), float(config.input_h),
                           float(config.input_w), float(config.agg_width)})});
  tensors.push_back({"cfg.kernels",
                     Shape{1, 1, 1, 2},
                     flat({float(config.attention_kernel),
                           float(config.prediction_kernel)})});
  tensors.push_back(
      {"cfg.flags",
       Shape{1, 1, 1, 5},
       flat({float(config.pyramid), float(config.attention_enabled),
             float(config.aggregation_enabled),
             float(config.attention_direction == AttentionDirection::bottom_up),
             float(config.stage_depth)})});
  std::vector<float> ch(config.backbone_channels.begin(),
                        config.backbone_channels.end());
  tensors.push_back(
      {"cfg.backbone_channels", Shape{1, 1, 1, config.levels}, ch});

  for (const auto& e : store.entries())
    tensors.push_back({e.name, e.value.shape(), e.value.data()});
  for (const auto& e : store.entries())
    if (e.trainable)
      tensors.push_back(
          {"mom." + e.name, e.momentum.shape(), e.momentum.data()});
  if (optim) {
    tensors.push_back({"opt.scalars",
                       Shape{1, 1, 1, 2},
                       flat({float(optim->iter), float(optim->decay_count)})});
    if (!optim->loss_history.empty())
      tensors.push_back({"opt.hist",
                         Shape{1, 1, 1, int(optim->loss_history.size())},
                         optim->loss_history});
  }

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, std::uint32_t(tensors.size()));
  for (const auto& t : tensors) append_tensor(out, t.name, t.shape, t.data);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError(path + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw CheckpointError(path + ": unsupported version " +
                          std::to_string(version));
  const std::uint32_t count = r.u32();
  std::map<std::string, NamedTensor> by_name;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint16_t len = r.u16();
    t.name.resize(len);
    r.read(t.name.data(), len);
    std::uint8_t rank;
    r.read(&rank, 1);
    if (rank != 4)
      throw CheckpointError(path + ": tensor " + t.name + " has rank " +
                            std::to_string(rank) + ", expected 4");
    t.shape.n = int(r.u32());
    t.shape.c = int(r.u32());
    t.shape.h = int(r.u32());
    t.shape.w = int(r.u32());
    if (t.shape.numel() <= 0 || t.shape.numel() > (std::int64_t(1) << 28))
      throw CheckpointError(path + ": tensor " + t.name +
                            " has implausible dims " + t.shape.str());
    t.data.resize(std::size_t(t.shape.numel()));
    for (auto& v : t.data) v = r.f32();
    if (by_name.count(t.name))
      throw CheckpointError(path + ": duplicate tensor " + t.name);
    by_name.emplace(t.name, std::move(t));
  }

  auto take = [&](const std::string& name) -> NamedTensor {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError(path + ": missing tensor " + name);
    NamedTensor t = std::move(it->second);
    by_name.erase(it);
    return t;
  };

  Checkpoint ck;
  {
    const auto geo = take("cfg.geometry");
    const auto ker = take("cfg.kernels");
    const auto flags = take("cfg.flags");
    if (geo.data.size() != 4 || ker.data.size() != 2 || flags.data.size() != 5)
      throw CheckpointError(path + ": malformed cfg tensors");
    ck.config.levels = int(geo.data[0]);
    ck.config.input_h = int(geo.data[1]);
    ck.config.input_w = int(geo.data[2]);
    ck.config.agg_width = int(geo.data[3]);
    ck.config.attention_kernel = int(ker.data[0]);
    ck.config.prediction_kernel = int(ker.data[1]);
    ck.config.pyramid = flags.data[0] != 0;
    ck.config.attention_enabled = flags.data[1] != 0;
    ck.config.aggregation_enabled = flags.data[2] != 0;
    ck.config.attention_direction = flags.data[3] != 0
                                        ? AttentionDirection::bottom_up
                                        : AttentionDirection::top_down;
    ck.config.stage_depth = int(flags.data[4]);
    const auto chs = take("cfg.backbone_channels");
    ck.config.backbone_channels.assign(chs.data.begin(), chs.data.end());
  }
  try {
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(path + ": invalid architecture: " + e.what());
  }

  // Rebuild the store structurally, then fill every tensor from the file so
  // ordering and trainability flags always match the architecture.
  ck.store = init_params(ck.config, 0);
  for (auto& e : ck.store.entries()) {
    NamedTensor t = take(e.name);
    if (!(t.shape == e.value.shape()))
      throw CheckpointError(path + ": tensor " + e.name + " has dims " +
                            t.shape.str() + ", architecture needs " +
                            e.value.shape().str());
    e.value.mutable_data() = std::move(t.data);
    if (e.trainable) {
      NamedTensor m = take("mom." + e.name);
      if (!(m.shape == e.value.shape()))
        throw CheckpointError(path + ": momentum dims mismatch for " + e.name);
      e.momentum.mutable_data() = std::move(m.data);
    }
  }

  if (by_name.count("opt.scalars")) {
    OptimState opt;
    const auto sc = take("opt.scalars");
    if (sc.data.size() != 2)
      throw CheckpointError(path + ": malformed opt.scalars");
    opt.iter = std::int64_t(sc.data[0]);
    opt.decay_count = int(sc.data[1]);
    if (by_name.count("opt.hist")) opt.loss_history = take("opt.hist").data;
    ck.optim = std::move(opt);
  }
  if (!by_name.empty())
    throw CheckpointError(path + ": unexpected tensor " +
                          by_name.begin()->first);
  return ck;
}

}  // namespace aamulet
