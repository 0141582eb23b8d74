#include "lrfr/model.hpp"

#include <cmath>
#include <string>

#include "lrfr/common.hpp"
#include "lrfr/rng.hpp"

namespace lrfr {

void NetworkConfig::validate() const {
  check(!channel_widths.empty(), "network config: need at least one stage");
  for (int w : channel_widths)
    check(w >= 1, "network config: channel width must be >= 1, got ", w);
  check(embedding_dim >= 2, "network config: embedding dim must be >= 2, got ",
        embedding_dim);
  check(input_size >= 1, "network config: input size must be >= 1, got ",
        input_size);
  int s = input_size;
  for (size_t i = 0; i < channel_widths.size(); ++i) s = (s + 1) / 2;
  check(s >= 1, "network config: input size ", input_size,
        " collapses below 1 px after ", channel_widths.size(), " stages");
}

int NetworkConfig::output_spatial() const {
  int s = input_size;
  for (size_t i = 0; i < channel_widths.size(); ++i) s = (s + 1) / 2;
  return s;
}

NetworkParams init_network(const NetworkConfig& config, uint64_t seed) {
  config.validate();
  RngStream rng(seed, /*stream_id=*/0x6d6f64656cULL);
  NetworkParams params;
  auto emit = [&](const std::string& name, Tensor t) {
    t.requires_grad = true;
    params.emplace(name, std::move(t));
  };

  int cin = 3;
  for (size_t s = 0; s < config.channel_widths.size(); ++s) {
    const int cout = config.channel_widths[s];
    const std::string stage = std::to_string(s);
    Tensor w({cout, cin, 3, 3});
    const double stddev = std::sqrt(2.0 / double(cin * 9));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, stddev);
    emit("conv" + stage + ".w", std::move(w));
    emit("conv" + stage + ".b", Tensor({cout}));
    emit("prelu" + stage + ".a", Tensor::full({cout}, 0.25));
    cin = cout;
  }

  Tensor fw({config.embedding_dim, cin});
  const double stddev = std::sqrt(2.0 / double(cin));
  for (int64_t i = 0; i < fw.numel(); ++i) fw[i] = rng.normal(0.0, stddev);
  emit("fc.w", std::move(fw));
  emit("fc.b", Tensor({config.embedding_dim}));
  return params;
}

int64_t param_count(const NetworkParams& params) {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

Tensor pack_batch(const std::vector<const ImageBuffer*>& images,
                  int input_size) {
  check(!images.empty(), "pack_batch: empty batch");
  const int64_t b = int64_t(images.size());
  const int64_t s = input_size;
  Tensor out({b, 3, s, s});
  for (int64_t i = 0; i < b; ++i) {
    const ImageBuffer& img = *images[size_t(i)];
    check(img.width == input_size && img.height == input_size,
          "pack_batch: image ", i, " is ", img.width, "x", img.height,
          ", expected ", input_size, "x", input_size);
    double* dst = out.data() + i * 3 * s * s;
    // Channels centered to [-1, 1]; without this the pooled features of
    // every image sit on top of each other and training stalls.
    for (int64_t y = 0; y < s; ++y)
      for (int64_t x = 0; x < s; ++x)
        for (int64_t c = 0; c < 3; ++c)
          dst[(c * s + y) * s + x] =
              img.data[size_t((y * s + x) * 3 + c)] * 2.0 - 1.0;
  }
  return out;
}

EmbedNetwork::EmbedNetwork(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  auto x = graph_.input("image");
  for (size_t s = 0; s < config_.channel_widths.size(); ++s) {
    const std::string stage = std::to_string(s);
    auto w = graph_.input("conv" + stage + ".w");
    auto bias = graph_.input("conv" + stage + ".b");
    auto slopes = graph_.input("prelu" + stage + ".a");
    x = graph_.conv2d(x, w, bias, /*stride=*/2, /*pad=*/1);
    x = graph_.prelu(x, slopes);
  }
  x = graph_.global_avg_pool(x);
  x = graph_.matmul(x, graph_.input("fc.w"), /*trans_b=*/true);
  x = graph_.add(x, graph_.input("fc.b"));
  graph_.set_output(x);
}

EmbedResult EmbedNetwork::embed(const NetworkParams& params,
                                const Tensor& batch) const {
  check(batch.rank() == 4 && batch.dim(1) == 3 &&
            batch.dim(2) == config_.input_size &&
            batch.dim(3) == config_.input_size,
        "embed: batch must be B x 3 x ", config_.input_size, " x ",
        config_.input_size, ", got ", batch.shape_str());
  NamedTensors inputs = params;
  inputs.emplace("image", batch);
  EvalResult ev = evaluate(graph_, inputs);
  return EmbedResult{std::move(ev.output), std::move(ev.cache)};
}

NamedTensors EmbedNetwork::backward(const EmbedResult& fwd,
                                    const Tensor& grad_embeddings) const {
  return backprop(graph_, fwd.cache, grad_embeddings);
}

}  // namespace lrfr
