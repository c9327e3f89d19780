#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dlcfm/adam.hpp"
#include "dlcfm/graph.hpp"
#include "dlcfm/rng.hpp"

namespace dlcfm::model {

// Gaussian encoder q(z|x): a dense feed-forward net mapping the flattened
// image to (mean, log-variance) of the d_Z-dimensional latent. The first d
// coordinates are the auxiliary-guided block, the rest reconstruction-
// focused.
struct EncoderConfig {
    std::size_t in_dim = 256;
    std::size_t d = 2;
    std::size_t d_Z = 8;
    std::vector<std::size_t> hidden = {128, 128};
    double leaky = 0.01;
    double logvar_clamp = 10.0;

    void validate() const;
};

// Parameter leaves are named enc.w0/enc.b0, ..., enc.wout/enc.bout.
void init_encoder_params(const EncoderConfig& cfg, StreamRng rng, ad::ParamMap& params);

struct EncoderHeads {
    ad::NodeId mu;
    ad::NodeId logvar;  // clamped to [-logvar_clamp, logvar_clamp]
};

// Declares the enc.* parameter leaves on the graph and wires the forward
// pass from an (n x in_dim) input node.
EncoderHeads build_encoder(ad::Graph& g, const EncoderConfig& cfg, ad::NodeId x);

// Binds every entry of `params` that matches a leaf name in `g`.
void bind_params(ad::Graph& g, const ad::ParamMap& params);

// Convenience evaluation on a batch; throws NumericError on non-finite
// activations.
void encode(const EncoderConfig& cfg, const ad::ParamMap& params, const ad::Array& x,
            ad::Array& mu, ad::Array& logvar);

// z = mu + exp(logvar / 2) * eps with eps bound as an input node.
ad::NodeId reparameterize(ad::Graph& g, ad::NodeId mu, ad::NodeId logvar, ad::NodeId eps);

// Array-level reparameterization draw.
ad::Array reparameterize(const ad::Array& mu, const ad::Array& logvar, StreamRng& rng);

// Split (n x d_Z) into the guided (n x d) and reconstruction (n x d_Z-d)
// blocks; throws when d is out of range.
std::pair<ad::Array, ad::Array> partition(const ad::Array& z, std::size_t d);

}  // namespace dlcfm::model
