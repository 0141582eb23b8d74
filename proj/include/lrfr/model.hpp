#pragma once

#include <cstdint>
#include <vector>

#include "lrfr/graph.hpp"
#include "lrfr/image.hpp"
#include "lrfr/tensor.hpp"

namespace lrfr {

struct NetworkConfig {
  std::vector<int> channel_widths = {16, 32, 64, 128};
  int embedding_dim = 128;
  int input_size = 112;

  void validate() const;
  // Spatial extent after the stride-2 stages (112 -> 56 -> 28 -> 14 -> 7).
  int output_spatial() const;
};

// Parameters are named tensors: convN.w, convN.b, preluN.a per stage,
// then fc.w (embedding_dim x last_width) and fc.b. The same map shape is
// used for gradients and momentum buffers.
using NetworkParams = NamedTensors;

// Kaiming fan-in normal kernels, zero biases, PReLU slopes 0.25. All
// returned tensors have requires_grad set.
NetworkParams init_network(const NetworkConfig& config, uint64_t seed);

int64_t param_count(const NetworkParams& params);

// NCHW batch from RGB images, pixel values rescaled from [0, 1] to
// [-1, 1]; every image must be input_size square.
Tensor pack_batch(const std::vector<const ImageBuffer*>& images,
                  int input_size);

struct EmbedResult {
  Tensor embeddings;  // B x embedding_dim, unnormalized
  EvalCache cache;
};

// Shared-weight embedding network: both resolutions of a pair go through
// the same parameters; callers run embed once per branch.
class EmbedNetwork {
 public:
  explicit EmbedNetwork(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  const OpGraph& graph() const { return graph_; }

  EmbedResult embed(const NetworkParams& params, const Tensor& batch) const;

  // d(params) given d(embeddings); fwd must come from this graph.
  NamedTensors backward(const EmbedResult& fwd,
                        const Tensor& grad_embeddings) const;

 private:
  NetworkConfig config_;
  OpGraph graph_;
};

}  // namespace lrfr
