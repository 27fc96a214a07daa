#pragma once

// Small convolutional image encoder. Four 3x3 stride-2 blocks stand in for a
// pretrained backbone: the forward pass uses blocks 1..3 only and the leading
// frozen_prefix blocks never receive gradient updates. The block-3 feature
// grid is flattened to l_I rows and projected by W_img.

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "msum/corpus.hpp"
#include "msum/tensor.hpp"

namespace msum {

inline constexpr int kImageBlocks = 4;
inline constexpr int kImageBlocksUsed = 3;

struct ImageConfig {
  int channels = 3;
  int height = 32;
  int width = 32;
  std::vector<int> block_channels = {8, 16, 32, 32};  // outputs of blocks 1..4
  int frozen_prefix = 2;
  int e_d = 64;

  int e_i() const { return block_channels[kImageBlocksUsed - 1]; }
  int grid_side() const {
    int s = height;
    for (int b = 0; b < kImageBlocksUsed; ++b) s = (s + 1) / 2;
    return s;
  }
  int l_i() const { return grid_side() * grid_side(); }
};

struct ConvBlock {
  NodePtr kernel;  // (9 * in_c x out_c)
  NodePtr bias;    // (1 x out_c)
};

struct ImageParams {
  std::vector<ConvBlock> blocks;
  NodePtr w_img;  // (e_I x e_D)
  ImageConfig cfg;

  static ImageParams init(const ImageConfig& cfg, std::mt19937_64& rng,
                          double stddev = 0.05) {
    auto randn = [&](Eigen::Index r, Eigen::Index c) {
      std::normal_distribution<double> d(0.0, stddev);
      Mat m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
      return m;
    };
    ImageParams p;
    p.cfg = cfg;
    int in_c = cfg.channels;
    for (int b = 0; b < kImageBlocks; ++b) {
      int out_c = cfg.block_channels[static_cast<size_t>(b)];
      p.blocks.push_back({make_param(randn(9 * in_c, out_c)),
                          make_param(Mat::Zero(1, out_c))});
      in_c = out_c;
    }
    p.w_img = make_param(randn(cfg.e_i(), cfg.e_d));
    return p;
  }

  std::vector<std::pair<std::string, NodePtr>> named_params() const {
    std::vector<std::pair<std::string, NodePtr>> out;
    for (int b = 0; b < kImageBlocks; ++b) {
      std::string base = "image.block" + std::to_string(b);
      out.emplace_back(base + ".kernel", blocks[static_cast<size_t>(b)].kernel);
      out.emplace_back(base + ".bias", blocks[static_cast<size_t>(b)].bias);
    }
    out.emplace_back("image.w_img", w_img);
    return out;
  }

  // Parameters that may change during stages 2-3: unfrozen used blocks plus
  // the projection. The unused fourth block is excluded with the frozen set.
  std::vector<std::pair<std::string, NodePtr>> trainable_params() const {
    std::vector<std::pair<std::string, NodePtr>> out;
    for (int b = cfg.frozen_prefix; b < kImageBlocksUsed; ++b) {
      std::string base = "image.block" + std::to_string(b);
      out.emplace_back(base + ".kernel", blocks[static_cast<size_t>(b)].kernel);
      out.emplace_back(base + ".bias", blocks[static_cast<size_t>(b)].bias);
    }
    out.emplace_back("image.w_img", w_img);
    return out;
  }
};

namespace detail {

// 3x3 stride-2 pad-1 gather map over an h x w grid; -1 marks padding.
inline std::vector<int> conv_index_map(int h, int w, int& out_h, int& out_w) {
  out_h = (h + 1) / 2;
  out_w = (w + 1) / 2;
  std::vector<int> map;
  map.reserve(static_cast<size_t>(out_h) * out_w * 9);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          int y = 2 * oy - 1 + ky;
          int x = 2 * ox - 1 + kx;
          map.push_back((y < 0 || y >= h || x < 0 || x >= w) ? -1 : y * w + x);
        }
  return map;
}

// (c, h, w) pixel grid as an (h*w x c) matrix.
inline Mat image_to_matrix(const RasterImage& img) {
  Mat m(img.height * img.width, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        m(y * img.width + x, c) = static_cast<double>(
            img.pixels[static_cast<size_t>((c * img.height + y) * img.width + x)]);
  return m;
}

}  // namespace detail

// One image through blocks 1..3: (l_I x e_D).
inline NodePtr encode_image(Tape& tape, const RasterImage& img,
                            const ImageParams& params) {
  const auto& cfg = params.cfg;
  if (img.channels != cfg.channels || img.height != cfg.height ||
      img.width != cfg.width)
    throw CorpusError("image shape does not match encoder configuration");
  auto x = tape.constant(detail::image_to_matrix(img));
  int h = cfg.height, w = cfg.width;
  for (int b = 0; b < kImageBlocksUsed; ++b) {
    int oh = 0, ow = 0;
    auto map = detail::conv_index_map(h, w, oh, ow);
    auto patches = tape.im2col(x, map, static_cast<Eigen::Index>(oh) * ow, 9);
    const auto& blk = params.blocks[static_cast<size_t>(b)];
    x = tape.relu(tape.add_rowvec(tape.matmul(patches, blk.kernel), blk.bias));
    h = oh;
    w = ow;
  }
  return tape.matmul(x, params.w_img);
}

// h_img: one (l_I x e_D) block per image, in input order.
inline std::vector<NodePtr> encode_images(Tape& tape,
                                          const std::vector<RasterImage>& images,
                                          const ImageParams& params) {
  if (images.empty()) throw CorpusError("encode_images: no images");
  std::vector<NodePtr> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(encode_image(tape, img, params));
  return out;
}

}  // namespace msum
