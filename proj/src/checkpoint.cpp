#include "lrfr/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "lrfr/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace lrfr {
namespace {

constexpr char kMagic[8] = {'L', 'R', 'F', 'R', 'C', 'K', 'P', 'T'};
constexpr uint8_t kTagF32 = 0;
constexpr uint8_t kTagF64 = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_raw(std::FILE* f, const void* p, size_t n,
               const std::filesystem::path& path) {
  check(std::fwrite(p, 1, n, f) == n, "checkpoint: short write to ",
        path.string());
}

template <typename T>
void write_val(std::FILE* f, T v, const std::filesystem::path& path) {
  write_raw(f, &v, sizeof(v), path);
}

void read_raw(std::FILE* f, void* p, size_t n,
              const std::filesystem::path& path) {
  check(std::fread(p, 1, n, f) == n, "checkpoint: truncated file ",
        path.string());
}

template <typename T>
T read_val(std::FILE* f, const std::filesystem::path& path) {
  T v;
  read_raw(f, &v, sizeof(v), path);
  return v;
}

}  // namespace

void write_tensors(const std::filesystem::path& path,
                   const NamedTensors& tensors) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    FilePtr f(std::fopen(tmp.string().c_str(), "wb"));
    check(f != nullptr, "checkpoint: cannot open ", tmp.string(),
          " for writing");
    write_raw(f.get(), kMagic, sizeof(kMagic), tmp);
    write_val<uint32_t>(f.get(), kCheckpointVersion, tmp);
    for (const auto& [name, t] : tensors) {
      check(!name.empty(), "checkpoint: empty tensor name");
      write_val<uint32_t>(f.get(), uint32_t(name.size()), tmp);
      write_raw(f.get(), name.data(), name.size(), tmp);
      write_val<uint8_t>(f.get(), kTagF64, tmp);
      write_val<uint32_t>(f.get(), uint32_t(t.rank()), tmp);
      for (int64_t e : t.shape()) write_val<int64_t>(f.get(), e, tmp);
      write_raw(f.get(), t.data(), size_t(t.numel()) * sizeof(double), tmp);
    }
    check(std::fflush(f.get()) == 0, "checkpoint: flush failed for ",
          tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

NamedTensors read_tensors(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  check(f != nullptr, "checkpoint: cannot open ", path.string());
  char magic[8];
  read_raw(f.get(), magic, sizeof(magic), path);
  check(std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
        "checkpoint: bad magic in ", path.string());
  const auto version = read_val<uint32_t>(f.get(), path);
  check(version == kCheckpointVersion, "checkpoint: unsupported version ",
        version, " in ", path.string());

  NamedTensors out;
  for (;;) {
    uint32_t name_len;
    const size_t got = std::fread(&name_len, 1, sizeof(name_len), f.get());
    if (got == 0) break;
    check(got == sizeof(name_len), "checkpoint: truncated record header in ",
          path.string());
    check(name_len > 0 && name_len < 4096, "checkpoint: bad name length ",
          name_len, " in ", path.string());
    std::string name(name_len, '\0');
    read_raw(f.get(), name.data(), name_len, path);
    const auto tag = read_val<uint8_t>(f.get(), path);
    check(tag == kTagF32 || tag == kTagF64, "checkpoint: unknown dtype tag ",
          int(tag), " for '", name, "' in ", path.string());
    const auto rank = read_val<uint32_t>(f.get(), path);
    check(rank <= 8, "checkpoint: rank ", rank, " too large for '", name,
          "' in ", path.string());
    std::vector<int64_t> shape(rank);
    for (auto& e : shape) e = read_val<int64_t>(f.get(), path);
    const int64_t numel = Tensor::numel_of(shape);
    Tensor t(shape);
    if (tag == kTagF64) {
      read_raw(f.get(), t.data(), size_t(numel) * sizeof(double), path);
    } else {
      std::vector<float> buf(size_t(numel), 0.0f);
      read_raw(f.get(), buf.data(), size_t(numel) * sizeof(float), path);
      for (int64_t i = 0; i < numel; ++i) t[i] = double(buf[size_t(i)]);
    }
    check(out.emplace(name, std::move(t)).second,
          "checkpoint: duplicate tensor '", name, "' in ", path.string());
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path,
                     const Checkpoint& ckpt) {
  ckpt.config.validate();
  check(ckpt.class_weights.rank() == 2 &&
            ckpt.class_weights.dim(1) == ckpt.config.embedding_dim,
        "checkpoint: class weights ", ckpt.class_weights.shape_str(),
        " do not match embedding dim ", ckpt.config.embedding_dim);
  NamedTensors all = ckpt.params;
  all.emplace("class_weights", ckpt.class_weights);
  std::vector<double> widths(ckpt.config.channel_widths.begin(),
                             ckpt.config.channel_widths.end());
  all.emplace("__meta.channel_widths",
              Tensor({int64_t(widths.size())}, widths));
  all.emplace("__meta.embedding_dim",
              Tensor::scalar(double(ckpt.config.embedding_dim)));
  all.emplace("__meta.input_size",
              Tensor::scalar(double(ckpt.config.input_size)));
  write_tensors(path, all);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  NamedTensors all = read_tensors(path);
  auto take = [&](const std::string& name) {
    auto it = all.find(name);
    check(it != all.end(), "checkpoint: missing '", name, "' in ",
          path.string());
    Tensor t = std::move(it->second);
    all.erase(it);
    return t;
  };

  Checkpoint ckpt;
  const Tensor widths = take("__meta.channel_widths");
  ckpt.config.channel_widths.clear();
  for (int64_t i = 0; i < widths.numel(); ++i)
    ckpt.config.channel_widths.push_back(int(widths[i]));
  ckpt.config.embedding_dim = int(take("__meta.embedding_dim")[0]);
  ckpt.config.input_size = int(take("__meta.input_size")[0]);
  ckpt.config.validate();

  ckpt.class_weights = take("class_weights");
  ckpt.class_weights.requires_grad = true;
  for (auto& [name, t] : all) t.requires_grad = true;
  ckpt.params = std::move(all);

  // The parameter set must rebuild the exact graph of this config.
  const NetworkParams expect = init_network(ckpt.config, 0);
  check(ckpt.params.size() == expect.size(),
        "checkpoint: expected ", expect.size(), " parameter tensors, got ",
        ckpt.params.size(), " in ", path.string());
  for (const auto& [name, t] : expect) {
    auto it = ckpt.params.find(name);
    check(it != ckpt.params.end(), "checkpoint: missing parameter '", name,
          "' in ", path.string());
    check(it->second.same_shape(t), "checkpoint: parameter '", name,
          "' has shape ", it->second.shape_str(), ", expected ",
          t.shape_str());
  }
  return ckpt;
}

}  // namespace lrfr
