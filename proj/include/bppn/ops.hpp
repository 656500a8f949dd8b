#pragma once

#include <span>
#include <utility>
#include <vector>

#include "bppn/tensor.hpp"

// Forward operations and their reverse-mode gradients. Backward functions
// accumulate into the provided grad buffers (never overwrite), so one buffer
// can collect contributions from several downstream consumers. Reductions
// accumulate in 64-bit.

namespace bppn {

// --- convolution (cross-correlation) ---------------------------------------

// x [N,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout] -> [N,Cout,H',W']
// H' = (H + 2*padding - kh)/stride + 1
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
void conv2d_backward(const Tensor& x, const Tensor& w, int stride, int padding,
                     const Tensor& gout, std::vector<float>* gx, std::vector<float>* gw,
                     std::vector<float>* gb);

// --- pointwise --------------------------------------------------------------

Tensor relu(const Tensor& x);  // subgradient at 0 is 0
void relu_backward(const Tensor& x, const Tensor& gout, std::vector<float>* gx);

// --- dense ------------------------------------------------------------------

// x [N,F], w [F,O], b [O] -> [N,O]
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gout,
                    std::vector<float>* gx, std::vector<float>* gw, std::vector<float>* gb);

// --- softmax ----------------------------------------------------------------

// row-wise, max-subtracted; rows sum to 1
Tensor softmax(const Tensor& x);
void softmax_backward(const Tensor& probs, const Tensor& gout, std::vector<float>* gx);

// --- spatial pooling ---------------------------------------------------------

// x [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);
void global_avg_pool_backward(const std::vector<int>& xshape, const Tensor& gout,
                              std::vector<float>* gx);

// --- prototype similarity ----------------------------------------------------

// features [N,D,h,w], prototype [D] -> per-position squared L2 distance [N,h,w]
Tensor sqdist_map(const Tensor& features, const Tensor& prototype);
Tensor sqdist_map(const Tensor& features, std::span<const float> prototype);
void sqdist_map_backward(const Tensor& features, std::span<const float> prototype,
                         const Tensor& gout, std::vector<float>* gfeatures,
                         std::span<float> gprototype);

// sim = exp(-dist / T), T > 0; values in (0,1]
Tensor exp_sim(const Tensor& dist, float temperature);
void exp_sim_backward(const Tensor& sim, float temperature, const Tensor& gout,
                      std::vector<float>* gdist);

// map [N,h,w] -> per-sample spatial max; ties take the smallest row-major
// index and the gradient routes only to the argmax position.
struct SpatialMax {
    Tensor values;              // [N]
    std::vector<int> argpos;    // row-major h*w index per sample
};
SpatialMax spatial_max(const Tensor& map);
void spatial_max_backward(const std::vector<int>& mapshape, const SpatialMax& mx,
                          const Tensor& gvalues, std::vector<float>* gmap);

}  // namespace bppn
