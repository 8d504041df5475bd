#pragma once

#include "ugd/core.hpp"
#include "ugd/gmm.hpp"
#include "ugd/guidance.hpp"
#include "ugd/library.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace ugd {

/// Shortest decimal that round-trips to the same double.
inline std::string format_number(double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

namespace detail {

/// Fixed 3-decimal coordinates keep SVG files small and stable.
inline std::string svg_num(double v) {
    std::array<char, 32> buf{};
    const double r = std::round(v * 1000.0) / 1000.0;
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), r == 0.0 ? 0.0 : r,
                                   std::chars_format::fixed, 3);
    return std::string(buf.data(), res.ptr);
}

struct Viewport {
    double x0, x1, y0, y1;
    double size = 600.0;
    double margin = 20.0;

    double px(double x) const { return margin + (x - x0) / (x1 - x0) * (size - 2 * margin); }
    double py(double y) const { return size - margin - (y - y0) / (y1 - y0) * (size - 2 * margin); }
    double scale() const { return (size - 2 * margin) / (x1 - x0); }
};

inline Viewport fit_viewport(const Matrix& samples, const GaussianMixture& world) {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (std::size_t i = 0; i < world.size(); ++i) {
        const Vector& m = world.means()[i];
        const Matrix& c = world.covariances()[i];
        const double sx = 3.0 * std::sqrt(c(0, 0)), sy = 3.0 * std::sqrt(c(1, 1));
        x0 = std::min(x0, m[0] - sx);
        x1 = std::max(x1, m[0] + sx);
        y0 = std::min(y0, m[1] - sy);
        y1 = std::max(y1, m[1] + sy);
    }
    // Samples widen the view, but never beyond twice the world's own extent.
    const double wx = x1 - x0, wy = y1 - y0;
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        const double x = samples(r, 0), y = samples(r, 1);
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        x0 = std::max(std::min(x0, x), x0 - wx);
        x1 = std::min(std::max(x1, x), x1 + wx);
        y0 = std::max(std::min(y0, y), y0 - wy);
        y1 = std::min(std::max(y1, y), y1 + wy);
    }
    // Square aspect so ellipses keep their shape.
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    const double half = 0.5 * std::max(x1 - x0, y1 - y0);
    return {cx - half, cx + half, cy - half, cy + half};
}

}  // namespace detail

/// Scatter plot of 2-D samples over the world geometry and the guidance overlays.
///
/// Element classes: "sample", "mean", "sigma1", "sigma2", "mask" (linear-inverse rows),
/// "halfplane" (label-field targets).
inline std::string emit_scatter_svg(const Matrix& samples, const GaussianMixture& world,
                                    const std::vector<GuidanceSpec>& overlays = {}) {
    using detail::svg_num;
    if (world.dimension() != 2) throw DimensionMismatch("scatter plots need a 2-dimensional world");
    if (samples.rows() > 0 && samples.cols() != 2) throw DimensionMismatch("scatter plots need 2-dimensional samples");
    const detail::Viewport vp = detail::fit_viewport(samples, world);
    const std::string size = svg_num(vp.size);

    std::string out;
    out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + size + "\" height=\"" + size +
           "\" viewBox=\"0 0 " + size + " " + size + "\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"" + size + "\" height=\"" + size + "\" fill=\"white\"/>\n";

    out += "<g id=\"overlays\">\n";
    for (const auto& spec : overlays) {
        const auto kind = spec.function->kind();
        if (kind == GuidanceKind::label_field) {
            // Shade the half-plane each label asks for.
            for (Eigen::Index i = 0; i < 2 && i < spec.prompt.size(); ++i) {
                const bool positive = spec.prompt[i] == 1.0;
                double ax0 = vp.x0, ax1 = vp.x1, ay0 = vp.y0, ay1 = vp.y1;
                if (i == 0) (positive ? ax0 : ax1) = std::clamp(0.0, vp.x0, vp.x1);
                if (i == 1) (positive ? ay0 : ay1) = std::clamp(0.0, vp.y0, vp.y1);
                out += "<rect class=\"halfplane\" x=\"" + svg_num(vp.px(ax0)) + "\" y=\"" + svg_num(vp.py(ay1)) +
                       "\" width=\"" + svg_num(vp.px(ax1) - vp.px(ax0)) + "\" height=\"" +
                       svg_num(vp.py(ay0) - vp.py(ay1)) + "\" fill=\"#4a90d9\" fill-opacity=\"0.08\"/>\n";
            }
        } else if (kind == GuidanceKind::linear_inverse) {
            const auto& lin = static_cast<const LinearInverse&>(*spec.function);
            const Matrix& a = lin.matrix();
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                // Line a_r . z = y_r, clipped to the view.
                const double p = a(r, 0), q = a(r, 1), c = spec.prompt[r];
                double xa, ya, xb, yb;
                if (std::abs(q) >= std::abs(p)) {
                    if (q == 0.0) continue;
                    xa = vp.x0, xb = vp.x1;
                    ya = (c - p * xa) / q, yb = (c - p * xb) / q;
                } else {
                    ya = vp.y0, yb = vp.y1;
                    xa = (c - q * ya) / p, xb = (c - q * yb) / p;
                }
                out += "<line class=\"mask\" x1=\"" + svg_num(vp.px(xa)) + "\" y1=\"" + svg_num(vp.py(ya)) +
                       "\" x2=\"" + svg_num(vp.px(xb)) + "\" y2=\"" + svg_num(vp.py(yb)) +
                       "\" stroke=\"#d94a4a\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n";
            }
        }
    }
    out += "</g>\n";

    out += "<g id=\"world\">\n";
    for (std::size_t i = 0; i < world.size(); ++i) {
        const Vector& m = world.means()[i];
        Eigen::SelfAdjointEigenSolver<Matrix> eig(world.covariances()[i]);
        const Vector ev = eig.eigenvalues();
        const Matrix vec = eig.eigenvectors();
        // Major axis angle in screen coordinates (y flipped).
        const double angle = -std::atan2(vec(1, 1), vec(0, 1)) * 180.0 / std::numbers::pi;
        for (int k : {1, 2}) {
            out += "<ellipse class=\"sigma" + std::to_string(k) + "\" cx=\"" + svg_num(vp.px(m[0])) + "\" cy=\"" +
                   svg_num(vp.py(m[1])) + "\" rx=\"" + svg_num(k * std::sqrt(ev[1]) * vp.scale()) + "\" ry=\"" +
                   svg_num(k * std::sqrt(ev[0]) * vp.scale()) + "\" transform=\"rotate(" + svg_num(angle) + " " +
                   svg_num(vp.px(m[0])) + " " + svg_num(vp.py(m[1])) +
                   ")\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\"/>\n";
        }
    }
    for (std::size_t i = 0; i < world.size(); ++i) {
        const Vector& m = world.means()[i];
        out += "<circle class=\"mean\" cx=\"" + svg_num(vp.px(m[0])) + "\" cy=\"" + svg_num(vp.py(m[1])) +
               "\" r=\"4\" fill=\"black\"/>\n";
    }
    out += "</g>\n";

    out += "<g id=\"samples\">\n";
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        if (!std::isfinite(samples(r, 0)) || !std::isfinite(samples(r, 1))) continue;
        out += "<circle class=\"sample\" cx=\"" + svg_num(vp.px(samples(r, 0))) + "\" cy=\"" +
               svg_num(vp.py(samples(r, 1))) + "\" r=\"1.5\" fill=\"#1f5fa8\" fill-opacity=\"0.5\"/>\n";
    }
    out += "</g>\n";
    out += "</svg>\n";
    return out;
}

}  // namespace ugd
