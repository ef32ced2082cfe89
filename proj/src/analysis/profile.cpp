#include "noisylab/analysis/profile.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "noisylab/analysis/activations.hpp"
#include "noisylab/common.hpp"

namespace noisylab::analysis {

using models::Role;

std::string_view profile_kind_name(ProfileKind kind) { return kind == ProfileKind::fisher ? "fisher" : "kl"; }

ProfileKind parse_profile_kind(std::string_view name) {
  if (name == "fisher") return ProfileKind::fisher;
  if (name == "kl") return ProfileKind::kl;
  throw std::invalid_argument("unknown profile kind '" + std::string(name) + "'");
}

double AnalysisProfile::role_mean(Role role) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& e : entries) {
    if (e.role == role && e.value) {
      sum += *e.value;
      ++n;
    }
  }
  return n > 0 ? sum / n : std::nan("");
}

namespace {

struct MeanStd {
  double mean;
  double std;
};

MeanStd mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

AnalysisProfile fisher_profile(models::SegmentationModel& model, const std::vector<FisherSample>& samples,
                               const FisherOptions& options) {
  if (samples.empty()) throw MissingInputError("fisher_profile needs at least one sample");
  const auto& modules = model.module_paths();
  std::vector<std::vector<double>> values(modules.size());
  for (const auto& s : samples) {
    const auto trace = capture_activations(model, s.image);
    for (std::size_t m = 0; m < modules.size(); ++m) {
      try {
        values[m].push_back(fisher_ratio(trace.cubes[m], s.labels, model.num_classes(), options));
      } catch (const UndefinedRatioError&) {
      }
    }
  }
  AnalysisProfile profile;
  profile.kind = ProfileKind::fisher;
  for (std::size_t m = 0; m < modules.size(); ++m) {
    ProfileEntry e{modules[m].path, modules[m].role, std::nullopt, std::nullopt};
    if (!values[m].empty()) {
      const auto ms = mean_std(values[m]);
      e.value = ms.mean;
      if (samples.size() > 1) e.std = ms.std;
    }
    profile.entries.push_back(std::move(e));
  }
  return profile;
}

namespace {

MeanStd weight_moments(const models::CheckpointEntry& e) {
  std::vector<double> v(e.data.begin(), e.data.end());
  const auto ms = mean_std(v);
  return {ms.mean, ms.std * ms.std};
}

}  // namespace

AnalysisProfile weight_kl_profile(const models::CheckpointBundle& exact, const models::CheckpointBundle& noisy) {
  if (exact.metadata.modules != noisy.metadata.modules) throw MismatchError("module paths differ between bundles");
  AnalysisProfile profile;
  profile.kind = ProfileKind::kl;
  for (const auto& m : exact.metadata.modules) {
    const std::string name = m.path + ".weight";
    const auto* p = exact.find(name);
    const auto* q = noisy.find(name);
    if (!p || !q) throw MismatchError("missing convolution weight " + name);
    if (p->shape != q->shape) throw models::ShapeMismatchError(name, "weight shapes differ");
    const auto mp = weight_moments(*p);
    const auto mq = weight_moments(*q);
    if (!(mp.std > 0.0) || !(mq.std > 0.0)) throw NumericalError(name + ": zero-variance weight tensor");
    profile.entries.push_back({m.path, m.role, gaussian_kl(mp.mean, mp.std, mq.mean, mq.std), std::nullopt});
  }
  return profile;
}

AnalysisProfile aggregate_profiles(const std::vector<AnalysisProfile>& profiles) {
  if (profiles.empty()) throw MissingInputError("no profiles to aggregate");
  AnalysisProfile out;
  out.kind = profiles.front().kind;
  out.smoothing = profiles.front().smoothing;
  const auto& ref = profiles.front().entries;
  for (const auto& p : profiles) {
    if (p.kind != out.kind || p.entries.size() != ref.size()) throw MismatchError("profiles are not comparable");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (p.entries[i].path != ref[i].path) throw MismatchError("profile paths differ at " + ref[i].path);
    }
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    std::vector<double> v;
    for (const auto& p : profiles) {
      if (p.entries[i].value) v.push_back(*p.entries[i].value);
    }
    ProfileEntry e{ref[i].path, ref[i].role, std::nullopt, std::nullopt};
    if (!v.empty()) {
      const auto ms = mean_std(v);
      e.value = ms.mean;
      e.std = ms.std;
    }
    out.entries.push_back(std::move(e));
  }
  return out;
}

AnalysisProfile smooth_profile(const AnalysisProfile& profile, Smoothing smoothing) {
  std::vector<std::size_t> defined;
  std::vector<double> series;
  for (std::size_t i = 0; i < profile.entries.size(); ++i) {
    if (profile.entries[i].value) {
      defined.push_back(i);
      series.push_back(*profile.entries[i].value);
    }
  }
  const auto smoothed = savgol_smooth(series, smoothing.window, smoothing.polyorder);
  AnalysisProfile out = profile;
  for (std::size_t k = 0; k < defined.size(); ++k) out.entries[defined[k]].value = smoothed[k];
  out.smoothing = smoothing;
  return out;
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::optional<double> parse_cell(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

std::string profile_to_csv(const AnalysisProfile& profile) {
  std::ostringstream os;
  os << "# kind=" << profile_kind_name(profile.kind);
  if (profile.smoothing) os << " savgol_window=" << profile.smoothing->window << " savgol_polyorder=" << profile.smoothing->polyorder;
  os << "\npath,role,value,std\n";
  for (const auto& e : profile.entries) {
    os << e.path << ',' << models::role_name(e.role) << ',' << cell(e.value) << ',' << cell(e.std) << '\n';
  }
  return os.str();
}

AnalysisProfile profile_from_csv(std::string_view text) {
  AnalysisProfile profile;
  std::istringstream is{std::string(text)};
  std::string line;
  bool header = false;
  std::optional<int> window;
  std::optional<int> order;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::istringstream meta(line.substr(1));
      std::string token;
      while (meta >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const auto key = token.substr(0, eq);
        const auto value = token.substr(eq + 1);
        if (key == "kind") profile.kind = parse_profile_kind(value);
        else if (key == "savgol_window") window = std::stoi(value);
        else if (key == "savgol_polyorder") order = std::stoi(value);
      }
      continue;
    }
    if (!header) {
      if (line != "path,role,value,std") throw std::runtime_error("profile CSV: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 4) throw std::runtime_error("profile CSV: expected 4 fields in '" + line + "'");
    profile.entries.push_back({f[0], models::parse_role(f[1]), parse_cell(f[2]), parse_cell(f[3])});
  }
  if (!header) throw std::runtime_error("profile CSV: missing header");
  if (window && order) profile.smoothing = Smoothing{*window, *order};
  return profile;
}

std::string render_profile_svg(const std::vector<ChartSeries>& series, const std::string& title) {
  constexpr double kWidth = 720;
  constexpr double kHeight = 360;
  constexpr double kLeft = 60;
  constexpr double kRight = 160;
  constexpr double kTop = 36;
  constexpr double kBottom = 40;
  static constexpr std::array<const char*, 6> kColors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::size_t n = 0;
  double lo = 0.0;
  double hi = 0.0;
  bool any = false;
  for (const auto& s : series) {
    n = std::max(n, s.profile.entries.size());
    for (const auto& e : s.profile.entries) {
      if (!e.value) continue;
      const double sd = e.std.value_or(0.0);
      lo = any ? std::min(lo, *e.value - sd) : *e.value - sd;
      hi = any ? std::max(hi, *e.value + sd) : *e.value + sd;
      any = true;
    }
  }
  lo = std::min(lo, 0.0);
  if (!(hi > lo)) hi = lo + 1.0;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto px = [&](std::size_t i) { return kLeft + (n > 1 ? plot_w * static_cast<double>(i) / static_cast<double>(n - 1) : plot_w / 2); };
  const auto py = [&](double v) { return kTop + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kLeft << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << py(lo) << "\" x2=\"" << kLeft + plot_w << "\" y2=\"" << py(lo)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(v) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\" "
       << "text-anchor=\"end\">" << v << "</text>\n";
  }
  if (!series.empty()) {
    const auto& entries = series.front().profile.entries;
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (entries[i - 1].role == Role::encoder && entries[i].role != Role::encoder) {
        const double x = (px(i - 1) + px(i)) / 2;
        os << "<line x1=\"" << x << "\" y1=\"" << kTop << "\" x2=\"" << x << "\" y2=\"" << kTop + plot_h
           << "\" stroke=\"gray\" stroke-dasharray=\"4,3\"/>\n";
        os << "<text x=\"" << x - 4 << "\" y=\"" << kTop + plot_h + 16
           << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">encoder</text>\n";
        os << "<text x=\"" << x + 4 << "\" y=\"" << kTop + plot_h + 16
           << "\" font-family=\"sans-serif\" font-size=\"10\">decoder</text>\n";
      }
    }
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % kColors.size()];
    const auto& entries = series[s].profile.entries;
    std::ostringstream upper;
    std::ostringstream lower;
    std::ostringstream line;
    upper.setf(std::ios::fixed);
    lower.setf(std::ios::fixed);
    line.setf(std::ios::fixed);
    upper.precision(2);
    lower.precision(2);
    line.precision(2);
    std::vector<std::pair<double, double>> low_pts;
    bool band = false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!entries[i].value) continue;
      const double v = *entries[i].value;
      line << px(i) << ',' << py(v) << ' ';
      if (entries[i].std) {
        band = true;
        upper << px(i) << ',' << py(v + *entries[i].std) << ' ';
        low_pts.emplace_back(px(i), py(v - *entries[i].std));
      }
    }
    if (band) {
      for (auto it = low_pts.rbegin(); it != low_pts.rend(); ++it) lower << it->first << ',' << it->second << ' ';
      os << "<polygon points=\"" << upper.str() << lower.str() << "\" fill=\"" << color
         << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    }
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    const double ly = kTop + 16.0 * static_cast<double>(s);
    os << "<line x1=\"" << kWidth - kRight + 12 << "\" y1=\"" << ly << "\" x2=\"" << kWidth - kRight + 32 << "\" y2=\""
       << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kWidth - kRight + 38 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << series[s].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string render_map_grid(const std::vector<std::vector<Tensor>>& rows, int cell, int gap) {
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const int width = static_cast<int>(cols) * (cell + gap) + gap;
  const int height = static_cast<int>(rows.size()) * (cell + gap) + gap;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(width) * height, 255);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const Tensor& map = rows[r][c];
      if (map.rank() != 2) throw MismatchError("map grid expects [H,W] maps");
      const int x0 = gap + static_cast<int>(c) * (cell + gap);
      const int y0 = gap + static_cast<int>(r) * (cell + gap);
      for (int y = 0; y < cell; ++y) {
        const int sy = std::min(map.dim(0) - 1, y * map.dim(0) / cell);
        for (int x = 0; x < cell; ++x) {
          const int sx = std::min(map.dim(1) - 1, x * map.dim(1) / cell);
          const float v = std::clamp(map[static_cast<std::size_t>(sy) * map.dim(1) + sx], 0.0f, 1.0f);
          pixels[static_cast<std::size_t>(y0 + y) * width + x0 + x] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
      }
    }
  }
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

}  // namespace noisylab::analysis
