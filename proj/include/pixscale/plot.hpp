#pragma once

// Minimal SVG charts for fit reports, CSV projection tables and image
// contact sheets. Output is plain text with fixed number formatting, so it
// is byte-stable across runs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pixscale/imaging.hpp"
#include "pixscale/scaling.hpp"

namespace pixscale::plot {

inline std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Series {
  std::string name;
  std::vector<double> x, y;
  bool line = true;
  bool markers = false;
  std::string color;
};

/// A single-panel chart; x/y are already in plot units (callers take log10
/// where they want log axes and say so in the axis label).
class Chart {
 public:
  Chart(std::string title, std::string xlabel, std::string ylabel)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

  void add(Series s) {
    if (s.color.empty()) s.color = palette(series_.size());
    series_.push_back(std::move(s));
  }

  std::string svg(int width = 640, int height = 420) const {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series_)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        x0 = std::min(x0, s.x[i]);
        x1 = std::max(x1, s.x[i]);
        y0 = std::min(y0, s.y[i]);
        y1 = std::max(y1, s.y[i]);
      }
    if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    const double pady = 0.05 * (y1 - y0);
    y0 -= pady;
    y1 += pady;
    const double left = 70, right = 150, top = 40, bottom = 55;
    const double pw = width - left - right, ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title_) << "</text>\n";
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
      o << "<text x=\"" << fmt(px(xv), "%.1f") << "\" y=\"" << fmt(top + ph + 16, "%.1f")
        << "\" text-anchor=\"middle\">" << fmt(xv, "%.3g") << "</text>\n";
      o << "<text x=\"" << fmt(left - 6, "%.1f") << "\" y=\"" << fmt(py(yv) + 4, "%.1f")
        << "\" text-anchor=\"end\">" << fmt(yv, "%.4g") << "</text>\n";
    }
    o << "<text x=\"" << fmt(left + pw / 2, "%.1f") << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
      << escape(xlabel_) << "</text>\n";
    o << "<text transform=\"translate(16," << fmt(top + ph / 2, "%.1f") << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(ylabel_) << "</text>\n";
    for (std::size_t k = 0; k < series_.size(); ++k) {
      const auto& s = series_[k];
      if (s.line && s.x.size() >= 2) {
        o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) o << fmt(px(s.x[i]), "%.2f") << ',' << fmt(py(s.y[i]), "%.2f") << ' ';
        o << "\"/>\n";
      }
      if (s.markers)
        for (std::size_t i = 0; i < s.x.size(); ++i)
          o << "<circle cx=\"" << fmt(px(s.x[i]), "%.2f") << "\" cy=\"" << fmt(py(s.y[i]), "%.2f")
            << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
      const double ly = top + 14 * static_cast<double>(k) + 8;
      o << "<rect x=\"" << fmt(left + pw + 10, "%.1f") << "\" y=\"" << fmt(ly - 7, "%.1f")
        << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>\n";
      o << "<text x=\"" << fmt(left + pw + 24, "%.1f") << "\" y=\"" << fmt(ly + 2, "%.1f") << "\">" << escape(s.name)
        << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
  }

  static std::string palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};
    return colors[i % 8];
  }

 private:
  std::string title_, xlabel_, ylabel_;
  std::vector<Series> series_;
};

/// Per-budget profiles with their fitted parabolas.
inline std::string isoflop_svg(const ScalingReport& rep) {
  Chart chart("IsoFLOP profiles (" + rep.metric + ")", "log10 parameters", rep.metric);
  for (std::size_t i = 0; i < rep.profiles.size(); ++i) {
    const auto& prof = rep.profiles[i];
    Series pts;
    pts.name = "C=" + fmt(prof.budget, "%.2g");
    pts.line = false;
    pts.markers = true;
    pts.color = Chart::palette(i);
    std::vector<ProfilePoint> sorted = prof.points;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.params < b.params; });
    for (const auto& p : sorted) {
      pts.x.push_back(std::log10(p.params));
      pts.y.push_back(p.value);
    }
    chart.add(pts);
    if (const auto& fit = rep.optima[i].fit) {
      Series curve;
      curve.name = "fit " + fmt(prof.budget, "%.2g");
      curve.color = Chart::palette(i);
      const double lo = std::min(fit->u_min, fit->u_opt), hi = std::max(fit->u_max, fit->u_opt);
      for (int k = 0; k <= 40; ++k) {
        const double u = lo + (hi - lo) * k / 40.0;
        curve.x.push_back(u);
        curve.y.push_back((*fit)(u));
      }
      chart.add(curve);
    }
  }
  return chart.svg();
}

/// N_opt and D_opt against compute on log-log axes, with the power-law fits.
inline std::string optimum_svg(const ScalingReport& rep) {
  Chart chart("Compute-optimal N and D", "log10 C (FLOPs)", "log10 count");
  Series n{"N_opt", {}, {}, false, true, ""}, d{"D_opt", {}, {}, false, true, ""};
  for (const auto& o : rep.optima) {
    n.x.push_back(std::log10(o.budget));
    n.y.push_back(std::log10(o.n_opt));
    d.x.push_back(std::log10(o.budget));
    d.y.push_back(std::log10(o.d_opt));
  }
  Series nf{"N ~ C^" + fmt(rep.n_fit.exponent, "%.3f"), {}, {}, true, false, ""};
  Series df{"D ~ C^" + fmt(rep.d_fit.exponent, "%.3f"), {}, {}, true, false, ""};
  for (const auto& o : rep.optima) {
    const double lc = std::log10(o.budget);
    nf.x.push_back(lc);
    nf.y.push_back(rep.n_fit.log10_coef + rep.n_fit.exponent * lc);
    df.x.push_back(lc);
    df.y.push_back(rep.d_fit.log10_coef + rep.d_fit.exponent * lc);
  }
  chart.add(n);
  chart.add(d);
  chart.add(nf);
  chart.add(df);
  return chart.svg();
}

/// Token-to-parameter ratio D_opt / N_opt over the fitted budget range.
inline std::string ratio_svg(const ScalingReport& rep) {
  Chart chart("Token-to-parameter ratio", "log10 C (FLOPs)", "D_opt / N_opt");
  Series fit{"fitted", {}, {}, true, false, ""}, obs{"observed", {}, {}, false, true, ""};
  const double lo = rep.n_fit.log10_x_min, hi = rep.n_fit.log10_x_max;
  for (int k = 0; k <= 20; ++k) {
    const double lc = lo + (hi - lo) * k / 20.0;
    fit.x.push_back(lc);
    fit.y.push_back(token_param_ratio(rep.n_fit, rep.d_fit, std::pow(10.0, lc)));
  }
  for (const auto& o : rep.optima) {
    obs.x.push_back(std::log10(o.budget));
    obs.y.push_back(o.d_opt / o.n_opt);
  }
  chart.add(fit);
  chart.add(obs);
  return chart.svg();
}

inline std::string projections_csv(std::span<const Projection> rows) {
  std::ostringstream o;
  o << "C,s,N_opt,D_opt,N_pp,D_pp_images,metric,value,extrapolation_decades\n";
  for (const auto& p : rows) {
    o << fmt(p.budget, "%.6g") << ',' << p.resolution << ',' << fmt(p.n_opt, "%.6g") << ',' << fmt(p.d_opt, "%.6g")
      << ',' << fmt(p.n_per_pixel, "%.6g") << ',' << fmt(p.d_per_pixel, "%.6g") << ',' << p.metric << ','
      << (p.metric_value ? fmt(*p.metric_value, "%.6g") : std::string()) << ','
      << fmt(p.extrapolation_decades, "%.3f") << '\n';
  }
  return o.str();
}

inline std::string optima_csv(const ScalingReport& rep) {
  std::ostringstream o;
  o << "C,N_opt,D_opt,value_opt,extrapolated,boundary\n";
  for (const auto& p : rep.optima)
    o << fmt(p.budget) << ',' << fmt(p.n_opt) << ',' << fmt(p.d_opt) << ',' << fmt(p.value_opt, "%.8g") << ','
      << (p.extrapolated ? 1 : 0) << ',' << (p.boundary ? 1 : 0) << '\n';
  return o.str();
}

/// Grid of images drawn as pixel rectangles.
inline std::string contact_sheet_svg(std::span<const ImageGrid> images, int columns, int scale = 4) {
  require(columns >= 1 && scale >= 1, "contact sheet needs positive columns and scale");
  int cell = 0;
  for (const auto& img : images) cell = std::max(cell, img.size);
  const int gap = 2;
  const int rows = static_cast<int>((images.size() + columns - 1) / columns);
  const int width = columns * (cell * scale + gap), height = std::max(1, rows) * (cell * scale + gap);
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" shape-rendering=\"crispEdges\">\n<rect width=\"100%\" height=\"100%\" fill=\"#888\"/>\n";
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto& img = images[k];
    const int ox = static_cast<int>(k % columns) * (cell * scale + gap);
    const int oy = static_cast<int>(k / columns) * (cell * scale + gap);
    const int s = scale * cell / img.size;
    for (int r = 0; r < img.size; ++r)
      for (int c = 0; c < img.size; ++c) {
        int rgb[3];
        for (int ch = 0; ch < 3; ++ch) rgb[ch] = img.at(r, c, img.channels == 3 ? ch : 0);
        char color[8];
        std::snprintf(color, sizeof(color), "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
        o << "<rect x=\"" << ox + c * s << "\" y=\"" << oy + r * s << "\" width=\"" << s << "\" height=\"" << s
          << "\" fill=\"" << color << "\"/>\n";
      }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace pixscale::plot
