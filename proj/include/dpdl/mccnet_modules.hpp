#pragma once

// Template definitions for the building blocks declared in mccnet.hpp.

#include <string>

#include "dpdl/errors.hpp"

namespace dpdl::mccnet {

template <class Ops>
typename Ops::Value encoder_block(Ops& ops, const std::string& scope, typename Ops::Value x, int channels,
                                  bool use_msfe) {
    ops.mark("block:encoder", scope);
    auto h = ops.lrelu(ops.conv(x, scope + ".conv1", channels, 3));
    h = ops.lrelu(ops.conv(h, scope + ".conv2", channels, 3));
    if (use_msfe) h = msfe(ops, scope + ".msfe", h);
    return h;
}

template <class Ops>
typename Ops::Value msfe(Ops& ops, const std::string& scope, typename Ops::Value x) {
    ops.mark("block:msfe", scope);
    const int c = static_cast<int>(shape_of(x)[0]);
    auto a1 = ops.lrelu(ops.conv(x, scope + ".conv3a", c, 3));
    auto b1 = ops.lrelu(ops.conv(x, scope + ".conv5a", c, 5));
    auto mid = ops.concat({a1, b1});
    auto a2 = ops.lrelu(ops.conv(mid, scope + ".conv3b", c, 3));
    auto b2 = ops.lrelu(ops.conv(mid, scope + ".conv5b", c, 5));
    return ops.conv(ops.concat({a1, b1, a2, b2}), scope + ".merge", c, 1);
}

template <class Ops>
std::pair<typename Ops::Value, typename Ops::Value> cross_correlation(Ops& ops, const std::string& scope,
                                                                      typename Ops::Value left,
                                                                      typename Ops::Value right) {
    const Shape& s = shape_of(left);
    if (s.size() != 3 || s != shape_of(right))
        throw ShapeError(scope + ": left/right feature shapes differ: " + to_string(s) + " vs " +
                         to_string(shape_of(right)));
    ops.mark("block:cc", scope);
    const int c = static_cast<int>(s[0]);
    const std::size_t h = s[1], w = s[2];
    ops.attention_budget(scope, h, w);

    // residual block shared by both views
    auto residual = [&](typename Ops::Value x) {
        auto r = ops.lrelu(ops.conv(x, scope + ".res.conv1", c, 3));
        r = ops.conv(r, scope + ".res.conv2", c, 3);
        return ops.add(x, r);
    };
    auto query = ops.conv(residual(left), scope + ".query", c, 1);
    auto key = ops.conv(residual(right), scope + ".key", c, 1);

    // C x H x W -> H x W x C (rows) and H x C x W (columns); H acts as the batch
    auto q_rows = ops.permute(query, {1, 2, 0});
    auto k_cols = ops.permute(key, {1, 0, 2});
    auto scores = ops.bmm(q_rows, k_cols);  // H x W x W
    auto attn_left = ops.softmax(scores);
    auto attn_right = ops.softmax(ops.transpose(scores));

    auto right_rows = ops.permute(right, {1, 2, 0});
    auto left_rows = ops.permute(left, {1, 2, 0});
    auto from_rows = [&](typename Ops::Value v) { return ops.permute(v, {2, 0, 1}); };
    auto left_out = ops.add(left, from_rows(ops.bmm(attn_left, right_rows)));
    auto right_out = ops.add(right, from_rows(ops.bmm(attn_right, left_rows)));
    return {left_out, right_out};
}

template <class Ops>
std::vector<typename Ops::Value> msf(Ops& ops, const std::string& scope,
                                     const std::vector<typename Ops::Value>& skips) {
    if (skips.size() != 3) throw ShapeError(scope + ": expected 3 skip maps");
    const Shape& base = shape_of(skips[0]);
    for (std::size_t i = 0; i < skips.size(); ++i) {
        const Shape& s = shape_of(skips[i]);
        if (s.size() != 3 || s[1] << i != base[1] || s[2] << i != base[2])
            throw ShapeError(scope + ": skip " + std::to_string(i) + " has extents " + to_string(s) +
                             ", expected 1/" + std::to_string(1 << i) + " of " + to_string(base));
    }
    ops.mark("block:msf", scope);
    std::vector<typename Ops::Value> out;
    for (std::size_t t = 0; t < skips.size(); ++t) {
        const std::string sub = scope + ".scale" + std::to_string(t);
        std::vector<typename Ops::Value> scaled;
        for (std::size_t s = 0; s < skips.size(); ++s) {
            auto v = skips[s];
            for (std::size_t k = s; k < t; ++k) v = ops.maxpool(v);
            for (std::size_t k = t; k < s; ++k) v = ops.upsample(v);
            scaled.push_back(v);
        }
        const int c = static_cast<int>(shape_of(skips[t])[0]);
        auto h = ops.conv(ops.concat(scaled), sub + ".reduce", c, 1);
        h = msfe(ops, sub + ".msfe", h);
        out.push_back(ops.conv(h, sub + ".out", c, 1));
    }
    return out;
}

template <class Ops>
typename Ops::Value decoder_block(Ops& ops, const std::string& scope, typename Ops::Value x,
                                  typename Ops::Value skip, int channels) {
    ops.mark("block:decoder", scope);
    auto up = ops.upsample(x);
    const Shape& us = shape_of(up);
    const Shape& ss = shape_of(skip);
    if (ss.size() != 3 || us[1] != ss[1] || us[2] != ss[2])
        throw ShapeError(scope + ": skip extents " + to_string(ss) + " do not match upsampled input " +
                         to_string(us));
    auto h = ops.conv(ops.concat({up, skip}), scope + ".merge", channels, 1);
    h = ops.lrelu(ops.conv(h, scope + ".conv5", channels, 5));
    return ops.lrelu(ops.conv(h, scope + ".conv3", channels, 3));
}

template <class Ops>
typename Ops::Value run(Ops& ops, typename Ops::Value left, typename Ops::Value right) {
    const NetworkConfig& cfg = ops.config();
    const int stem = cfg.width(cfg.stem_channels);
    std::array<int, 4> enc{};
    for (int i = 0; i < 4; ++i) enc[i] = cfg.width(cfg.block_channels[i]);
    std::array<int, 3> dec{};
    for (int i = 0; i < 3; ++i) dec[i] = cfg.width(cfg.decoder_channels[i]);

    typename Ops::Value bottleneck;
    std::vector<typename Ops::Value> skips;
    if (cfg.use_cross_correlation) {
        // siamese encoder: "left.encoder.*" and "right.encoder.*" alias "encoder.*"
        auto shallow = [&](const std::string& br, typename Ops::Value x) {
            auto s = ops.lrelu(ops.conv(x, br + "encoder.stem", stem, 3));
            auto e1 = encoder_block(ops, br + "encoder.block1", s, enc[0], false);
            auto e2 = encoder_block(ops, br + "encoder.block2", ops.maxpool(e1), enc[1], false);
            return std::pair{e1, e2};
        };
        auto [e1l, e2l] = shallow("left.", left);
        auto [e1r, e2r] = shallow("right.", right);
        auto [c1l, c1r] = cross_correlation(ops, "cc1", e2l, e2r);
        auto e3l = encoder_block(ops, "left.encoder.block3", ops.maxpool(c1l), enc[2], cfg.use_msfe);
        auto e3r = encoder_block(ops, "right.encoder.block3", ops.maxpool(c1r), enc[2], cfg.use_msfe);
        auto [c2l, c2r] = cross_correlation(ops, "cc2", e3l, e3r);
        auto e4l = encoder_block(ops, "left.encoder.block4", ops.maxpool(c2l), enc[3], cfg.use_msfe);
        auto e4r = encoder_block(ops, "right.encoder.block4", ops.maxpool(c2r), enc[3], cfg.use_msfe);
        ops.mark("block:fusion", "fusion");
        bottleneck = ops.lrelu(ops.conv(ops.concat({e4l, e4r}), "fusion", enc[3], 3));

        std::vector<typename Ops::Value> sl{e1l, c1l, c2l}, sr{e1r, c1r, c2r};
        if (cfg.use_multiscale_fusion) {
            sl = msf(ops, "left.msf", sl);
            sr = msf(ops, "right.msf", sr);
        }
        for (std::size_t i = 0; i < 3; ++i) skips.push_back(ops.concat({sl[i], sr[i]}));
    } else {
        // single encoder on the channel-concatenated views
        auto x = ops.concat({left, right});
        auto s = ops.lrelu(ops.conv(x, "encoder.stem", stem, 3));
        auto e1 = encoder_block(ops, "encoder.block1", s, enc[0], false);
        auto e2 = encoder_block(ops, "encoder.block2", ops.maxpool(e1), enc[1], false);
        auto e3 = encoder_block(ops, "encoder.block3", ops.maxpool(e2), enc[2], cfg.use_msfe);
        bottleneck = encoder_block(ops, "encoder.block4", ops.maxpool(e3), enc[3], cfg.use_msfe);
        skips = {e1, e2, e3};
        if (cfg.use_multiscale_fusion) skips = msf(ops, "msf", skips);
    }

    auto d = decoder_block(ops, "decoder.block1", bottleneck, skips[2], dec[0]);
    d = decoder_block(ops, "decoder.block2", d, skips[1], dec[1]);
    d = decoder_block(ops, "decoder.block3", d, skips[0], dec[2]);
    ops.mark("block:head", "head");
    d = ops.lrelu(ops.conv(d, "head.conv1", 3, 3));
    auto z = ops.conv(d, "head.conv2", 3, 3);
    return cfg.residual_output ? ops.add(left, z) : ops.sigmoid(z);
}

}  // namespace dpdl::mccnet
