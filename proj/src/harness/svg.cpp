#include "samlab/harness.hpp"

#include "samlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace samlab::harness {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
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

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string tick(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

void header(std::ostringstream& os, const std::string& title, const std::string& xlabel,
            const std::string& ylabel) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" fill=\"white\"/>\n"
     << "<text x=\"" << num(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << escape(title) << "</text>\n"
     << "<text x=\"" << num(kLeft + (kWidth - kLeft - kRight) / 2) << "\" y=\""
     << num(kHeight - 12) << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(xlabel)
     << "</text>\n"
     << "<text x=\"16\" y=\"" << num(kTop + (kHeight - kTop - kBottom) / 2)
     << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << num(kTop + (kHeight - kTop - kBottom) / 2) << ")\">" << escape(ylabel) << "</text>\n";
}

}  // namespace

std::string svg_line_plot(const LinePlot& plot) {
  const double inf = std::numeric_limits<double>::infinity();
  double x0 = inf, x1 = -inf, y0 = inf, y1 = -inf;
  auto ty = [&](double y) { return plot.log_y ? std::log10(y) : y; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!plot.log_y || y > 0.0);
  };
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x0 <= x1)) x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  header(os, plot.title, plot.xlabel, plot.ylabel);
  os << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw)
     << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto ylabel_of = [&](double v) { return plot.log_y ? "1e" + tick(v) : tick(v); };
  os << "<text x=\"" << num(kLeft) << "\" y=\"" << num(kTop + ph + 16)
     << "\" text-anchor=\"middle\" font-size=\"10\">" << tick(x0) << "</text>\n"
     << "<text x=\"" << num(kLeft + pw) << "\" y=\"" << num(kTop + ph + 16)
     << "\" text-anchor=\"middle\" font-size=\"10\">" << tick(x1) << "</text>\n"
     << "<text x=\"" << num(kLeft - 4) << "\" y=\"" << num(kTop + ph)
     << "\" text-anchor=\"end\" font-size=\"10\">" << escape(ylabel_of(y0)) << "</text>\n"
     << "<text x=\"" << num(kLeft - 4) << "\" y=\"" << num(kTop + 8)
     << "\" text-anchor=\"end\" font-size=\"10\">" << escape(ylabel_of(y1)) << "</text>\n";

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& s = plot.series[k];
    const char* color = kPalette[k % (sizeof kPalette / sizeof kPalette[0])];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      os << (first ? "" : " ") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
      first = false;
    }
    os << "\"/>\n";
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << num(kLeft + pw + 10) << "\" y1=\"" << num(ly - 4) << "\" x2=\""
       << num(kLeft + pw + 30) << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << num(kLeft + pw + 34) << "\" y=\"" << num(ly)
       << "\" font-size=\"11\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_grid_plot(const GridPlot& plot) {
  if (plot.cells.size() != plot.ys.size()) throw UsageError("svg_grid_plot: rows must match ys");
  for (const auto& row : plot.cells) {
    if (row.size() != plot.xs.size()) throw UsageError("svg_grid_plot: columns must match xs");
  }
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  const double nx = static_cast<double>(std::max<std::size_t>(plot.xs.size(), 1));
  const double ny = static_cast<double>(std::max<std::size_t>(plot.ys.size(), 1));
  const double cw = pw / nx;
  const double ch = ph / ny;

  std::ostringstream os;
  header(os, plot.title, plot.xlabel, plot.ylabel);
  for (std::size_t r = 0; r < plot.cells.size(); ++r) {
    for (std::size_t c = 0; c < plot.xs.size(); ++c) {
      const auto it = plot.colors.find(plot.cells[r][c]);
      const std::string color = it == plot.colors.end() ? "#cccccc" : it->second;
      os << "<rect x=\"" << num(kLeft + cw * static_cast<double>(c)) << "\" y=\""
         << num(kTop + ph - ch * static_cast<double>(r + 1)) << "\" width=\"" << num(cw)
         << "\" height=\"" << num(ch) << "\" fill=\"" << escape(color)
         << "\" stroke=\"white\"/>\n";
    }
  }
  for (std::size_t c = 0; c < plot.xs.size(); ++c) {
    os << "<text x=\"" << num(kLeft + cw * (static_cast<double>(c) + 0.5)) << "\" y=\""
       << num(kTop + ph + 14) << "\" text-anchor=\"middle\" font-size=\"9\">"
       << tick(plot.xs[c]) << "</text>\n";
  }
  for (std::size_t r = 0; r < plot.ys.size(); ++r) {
    os << "<text x=\"" << num(kLeft - 4) << "\" y=\""
       << num(kTop + ph - ch * (static_cast<double>(r) + 0.5) + 3)
       << "\" text-anchor=\"end\" font-size=\"9\">" << tick(plot.ys[r]) << "</text>\n";
  }
  double ly = kTop + 14.0;
  for (const auto& [label, color] : plot.colors) {
    os << "<rect x=\"" << num(kLeft + pw + 10) << "\" y=\"" << num(ly - 10)
       << "\" width=\"12\" height=\"12\" fill=\"" << escape(color) << "\"/>\n"
       << "<text x=\"" << num(kLeft + pw + 28) << "\" y=\"" << num(ly)
       << "\" font-size=\"11\">" << escape(label) << "</text>\n";
    ly += 18.0;
  }
  os << "</svg>\n";
  return os.str();
}

namespace {

bool name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == ':' ||
         c == '.';
}

bool fail(std::string* error, const std::string& msg) {
  if (error) *error = msg;
  return false;
}

// Checks entity references starting at s[i] == '&'; advances i past ';'.
bool entity_ok(const std::string& s, std::size_t& i) {
  const std::size_t semi = s.find(';', i);
  if (semi == std::string::npos || semi - i > 10) return false;
  const std::string body = s.substr(i + 1, semi - i - 1);
  static const char* named[] = {"amp", "lt", "gt", "quot", "apos"};
  bool ok = std::find(std::begin(named), std::end(named), body) != std::end(named);
  if (!ok && body.size() > 1 && body[0] == '#') {
    ok = std::all_of(body.begin() + 1, body.end(), [](char c) {
      return std::isxdigit(static_cast<unsigned char>(c)) || c == 'x';
    });
  }
  i = semi;
  return ok;
}

}  // namespace

bool svg_well_formed(const std::string& s, std::string* error) {
  std::vector<std::string> stack;
  bool seen_root = false;
  bool root_closed = false;
  std::size_t i = 0;
  const std::size_t n = s.size();
  while (i < n) {
    if (s[i] != '<') {
      if (s[i] == '&' && !entity_ok(s, i)) return fail(error, "bad entity reference");
      if (s[i] == '>') return fail(error, "unescaped '>' in text");
      if (!std::isspace(static_cast<unsigned char>(s[i])) && stack.empty()) {
        return fail(error, "text outside the root element");
      }
      ++i;
      continue;
    }
    if (s.compare(i, 5, "<?xml") == 0) {
      if (seen_root || i != s.find_first_not_of(" \t\r\n")) {
        return fail(error, "XML declaration not at the start");
      }
      const std::size_t end = s.find("?>", i);
      if (end == std::string::npos) return fail(error, "unterminated XML declaration");
      i = end + 2;
      continue;
    }
    if (s.compare(i, 4, "<!--") == 0) {
      const std::size_t end = s.find("-->", i + 4);
      if (end == std::string::npos) return fail(error, "unterminated comment");
      i = end + 3;
      continue;
    }
    if (i + 1 < n && s[i + 1] == '/') {
      std::size_t j = i + 2;
      while (j < n && name_char(s[j])) ++j;
      const std::string name = s.substr(i + 2, j - i - 2);
      while (j < n && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j >= n || s[j] != '>') return fail(error, "malformed closing tag");
      if (stack.empty()) return fail(error, "closing tag </" + name + "> without an open element");
      if (stack.back() != name) {
        return fail(error, "mismatched closing tag </" + name + ">, expected </" + stack.back() + ">");
      }
      stack.pop_back();
      if (stack.empty()) root_closed = true;
      i = j + 1;
      continue;
    }
    std::size_t j = i + 1;
    while (j < n && name_char(s[j])) ++j;
    const std::string name = s.substr(i + 1, j - i - 1);
    if (name.empty()) return fail(error, "empty tag name");
    if (stack.empty()) {
      if (seen_root) return fail(error, "more than one root element");
      if (name != "svg") return fail(error, "root element is <" + name + ">, expected <svg>");
      seen_root = true;
    }
    std::vector<std::string> attrs;
    bool self_close = false;
    for (;;) {
      while (j < n && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j >= n) return fail(error, "unterminated tag <" + name + ">");
      if (s[j] == '>') {
        ++j;
        break;
      }
      if (s[j] == '/') {
        if (j + 1 >= n || s[j + 1] != '>') return fail(error, "malformed self-closing tag");
        self_close = true;
        j += 2;
        break;
      }
      const std::size_t a0 = j;
      while (j < n && name_char(s[j])) ++j;
      if (j == a0) return fail(error, "bad attribute in <" + name + ">");
      const std::string attr = s.substr(a0, j - a0);
      if (std::find(attrs.begin(), attrs.end(), attr) != attrs.end()) {
        return fail(error, "duplicate attribute " + attr);
      }
      attrs.push_back(attr);
      while (j < n && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j >= n || s[j] != '=') return fail(error, "attribute " + attr + " has no value");
      ++j;
      while (j < n && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j >= n || (s[j] != '"' && s[j] != '\'')) {
        return fail(error, "attribute " + attr + " is not quoted");
      }
      const char q = s[j++];
      while (j < n && s[j] != q) {
        if (s[j] == '<') return fail(error, "'<' inside attribute " + attr);
        if (s[j] == '&' && !entity_ok(s, j)) return fail(error, "bad entity in attribute " + attr);
        ++j;
      }
      if (j >= n) return fail(error, "unterminated attribute " + attr);
      ++j;
    }
    if (self_close) {
      if (stack.empty()) root_closed = true;
    } else {
      stack.push_back(name);
    }
    if (root_closed && !stack.empty()) return fail(error, "content after the root element");
    i = j;
  }
  if (!stack.empty()) return fail(error, "unclosed element <" + stack.back() + ">");
  if (!seen_root) return fail(error, "no <svg> root element");
  return true;
}

}  // namespace samlab::harness
