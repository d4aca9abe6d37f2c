#include "metasurf/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "metasurf/error.hpp"
#include "metasurf/rng.hpp"

namespace metasurf {

namespace {

constexpr Cell kSquare[] = {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1},
                            {1, 2}, {2, 0}, {2, 1}, {2, 2}};
constexpr Cell kCross[] = {{0, 1}, {1, 0}, {1, 1}, {1, 2}, {2, 1}};
constexpr Cell kTriN[] = {{0, 1}, {1, 0}, {1, 1}, {1, 2}};
constexpr Cell kTriE[] = {{0, 0}, {1, 0}, {1, 1}, {2, 0}};
constexpr Cell kTriS[] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}};
constexpr Cell kTriW[] = {{0, 1}, {1, 0}, {1, 1}, {2, 1}};
constexpr Cell kU[] = {{0, 0}, {0, 2}, {1, 0}, {1, 1}, {1, 2}};
constexpr Cell kH[] = {{0, 0}, {1, 0}, {2, 0}, {1, 1}, {0, 2}, {1, 2}, {2, 2}};

const std::array<BasicShape, kShapeKinds> kShapes = {{
    {ShapeKind::Square, "Square", kSquare, 3, 3},
    {ShapeKind::Cross, "Cross", kCross, 3, 3},
    {ShapeKind::TriangleN, "TriangleN", kTriN, 2, 3},
    {ShapeKind::TriangleE, "TriangleE", kTriE, 3, 2},
    {ShapeKind::TriangleS, "TriangleS", kTriS, 2, 3},
    {ShapeKind::TriangleW, "TriangleW", kTriW, 3, 2},
    {ShapeKind::UShape, "UShape", kU, 2, 3},
    {ShapeKind::HShape, "HShape", kH, 3, 3},
}};

bool in_grid(int r, int c) { return r >= 0 && r < kGridSide && c >= 0 && c < kGridSide; }

std::vector<Cell> normalized(std::vector<Cell> cells) {
  int r0 = std::numeric_limits<int>::max();
  int c0 = std::numeric_limits<int>::max();
  for (const auto& cell : cells) {
    r0 = std::min(r0, cell.row);
    c0 = std::min(c0, cell.col);
  }
  for (auto& cell : cells) {
    cell.row -= r0;
    cell.col -= c0;
  }
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  return cells;
}

// Maps each placement through a cell transform; fails if some transformed
// instance is not a translate of a basic shape.
template <typename Transform>
bool remap_placements(const std::vector<Placement>& in, Transform t,
                      std::vector<Placement>& out) {
  out.clear();
  for (const auto& pl : in) {
    const auto& shape = basic_shape(pl.shape);
    std::vector<Cell> moved;
    for (const auto& off : shape.cells) moved.push_back(t(Cell{pl.row + off.row, pl.col + off.col}));
    int r0 = std::numeric_limits<int>::max();
    int c0 = std::numeric_limits<int>::max();
    for (const auto& cell : moved) {
      r0 = std::min(r0, cell.row);
      c0 = std::min(c0, cell.col);
    }
    const auto norm = normalized(moved);
    bool found = false;
    for (const auto& candidate : kShapes) {
      if (normalized({candidate.cells.begin(), candidate.cells.end()}) == norm) {
        out.push_back({candidate.kind, r0, c0});
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

template <typename Transform>
Pattern transformed(const Pattern& p, Transform t) {
  Pattern out;
  for (int r = 0; r < kGridSide; ++r)
    for (int c = 0; c < kGridSide; ++c) {
      const Cell m = t(Cell{r, c});
      out.set(m.row, m.col, p.at(r, c) != 0);
    }
  out.seed = p.seed;
  switch (p.tag) {
    case PatternClass::RDN:
    case PatternClass::OTHER:
      out.tag = p.tag;
      break;
    case PatternClass::PLG:
      // Reflections preserve 4-connectivity.
      out.tag = is_connected(out) ? PatternClass::PLG : PatternClass::OTHER;
      break;
    case PatternClass::PTN:
      if (remap_placements(p.placements, t, out.placements) && placements_consistent(out)) {
        out.tag = PatternClass::PTN;
      } else {
        out.placements.clear();
        out.tag = PatternClass::OTHER;
      }
      break;
  }
  return out;
}

struct Point {
  double x;  // column axis
  double y;  // row axis
};

void rasterize_polygon(const std::vector<Point>& poly, Pattern& out) {
  const std::size_t n = poly.size();
  // Interior: scanline through cell centres, even-odd rule.
  for (int r = 0; r < kGridSide; ++r) {
    const double y = r + 0.5;
    std::vector<double> xs;
    for (std::size_t i = 0; i < n; ++i) {
      const Point a = poly[i];
      const Point b = poly[(i + 1) % n];
      if ((a.y <= y && b.y > y) || (b.y <= y && a.y > y)) {
        xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      for (int c = 0; c < kGridSide; ++c) {
        const double x = c + 0.5;
        if (x >= xs[k] && x <= xs[k + 1]) out.set(r, c, true);
      }
    }
  }
  // Boundary: every cell an edge passes through.
  for (std::size_t i = 0; i < n; ++i) {
    const Point a = poly[i];
    const Point b = poly[(i + 1) % n];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const int steps = static_cast<int>(std::ceil(len * 8.0)) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      const int c = std::clamp(static_cast<int>(std::floor(a.x + t * (b.x - a.x))), 0, kGridSide - 1);
      const int r = std::clamp(static_cast<int>(std::floor(a.y + t * (b.y - a.y))), 0, kGridSide - 1);
      out.set(r, c, true);
    }
  }
}

// Joins every smaller component to the largest along an L-shaped shortest
// 4-connected path between their closest cells.
void bridge_components(Pattern& p) {
  for (;;) {
    auto comps = components(p);
    if (comps.size() <= 1) return;
    const auto& main = comps.front();
    const auto& other = comps[1];
    int best = std::numeric_limits<int>::max();
    Cell from{}, to{};
    for (const auto& a : other)
      for (const auto& b : main) {
        const int d = std::abs(a.row - b.row) + std::abs(a.col - b.col);
        if (d < best) {
          best = d;
          from = a;
          to = b;
        }
      }
    int r = from.row;
    int c = from.col;
    while (r != to.row) {
      r += (to.row > r) ? 1 : -1;
      p.set(r, c, true);
    }
    while (c != to.col) {
      c += (to.col > c) ? 1 : -1;
      p.set(r, c, true);
    }
  }
}

}  // namespace

std::string_view to_string(PatternClass c) noexcept {
  switch (c) {
    case PatternClass::PLG: return "PLG";
    case PatternClass::PTN: return "PTN";
    case PatternClass::RDN: return "RDN";
    case PatternClass::OTHER: return "OTHER";
  }
  return "OTHER";
}

PatternClass pattern_class_from_string(std::string_view name) {
  if (name == "PLG" || name == "plg") return PatternClass::PLG;
  if (name == "PTN" || name == "ptn") return PatternClass::PTN;
  if (name == "RDN" || name == "rdn") return PatternClass::RDN;
  if (name == "OTHER" || name == "other") return PatternClass::OTHER;
  throw Error(ErrorKind::InvalidArgument, "unknown pattern class '" + std::string(name) + "'");
}

const BasicShape& basic_shape(ShapeKind kind) { return kShapes[static_cast<std::size_t>(kind)]; }

Pattern Pattern::ones() {
  Pattern p;
  p.cells_.fill(1);
  return p;
}

int Pattern::count_ones() const {
  int n = 0;
  for (auto v : cells_) n += v;
  return n;
}

Pattern gen_rdn(std::uint64_t seed, double fill_prob) {
  if (!(fill_prob >= 0.0 && fill_prob <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "fill_prob must lie in [0,1]");
  Rng rng(seed);
  Pattern p;
  for (int r = 0; r < kGridSide; ++r)
    for (int c = 0; c < kGridSide; ++c) p.set(r, c, rng.bernoulli(fill_prob));
  p.tag = PatternClass::RDN;
  p.seed = seed;
  return p;
}

Pattern gen_plg(std::uint64_t seed, double target_fill, int max_vertices) {
  if (!(target_fill > 0.0 && target_fill <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "target_fill must lie in (0,1]");
  if (max_vertices < 3) throw Error(ErrorKind::InvalidArgument, "max_vertices must be >= 3");

  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(hash64(seed, attempt));
    const int nv = static_cast<int>(rng.between(3, max_vertices));
    // Star-shaped polygons of mean radius R cover roughly pi R^2 cells.
    const double radius = 1.15 * std::sqrt(target_fill * kGridCells / std::numbers::pi);
    const double cx = rng.uniform(4.0, 12.0);
    const double cy = rng.uniform(4.0, 12.0);
    std::vector<double> angles(nv);
    for (auto& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    std::vector<Point> poly;
    for (double a : angles) {
      const double rr = radius * rng.uniform(0.6, 1.3);
      poly.push_back({std::clamp(std::round(cx + rr * std::cos(a)), 0.0, double(kGridSide)),
                      std::clamp(std::round(cy + rr * std::sin(a)), 0.0, double(kGridSide))});
    }
    Pattern p;
    rasterize_polygon(poly, p);
    if (p.count_ones() == 0) continue;
    bridge_components(p);
    if (!is_connected(p)) continue;
    p.tag = PatternClass::PLG;
    p.seed = seed;
    return p;
  }
  throw Error(ErrorKind::GenerationRetryExhausted,
              "no connected polygon after 100 attempts (seed " + std::to_string(seed) + ")");
}

Pattern gen_ptn(std::uint64_t seed, int min_shapes, int max_shapes) {
  if (min_shapes < 1 || max_shapes < min_shapes)
    throw Error(ErrorKind::InvalidArgument, "require 1 <= min_shapes <= max_shapes");
  Rng rng(seed);
  Pattern p;
  const int count = static_cast<int>(rng.between(min_shapes, max_shapes));
  for (int s = 0; s < count; ++s) {
    const auto& shape = basic_shape(static_cast<ShapeKind>(rng.below(kShapeKinds)));
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const int r0 = static_cast<int>(rng.below(kGridSide - shape.height + 1));
      const int c0 = static_cast<int>(rng.below(kGridSide - shape.width + 1));
      const bool overlaps = std::any_of(shape.cells.begin(), shape.cells.end(), [&](const Cell& off) {
        return p.at(r0 + off.row, c0 + off.col) != 0;
      });
      if (overlaps) continue;
      for (const auto& off : shape.cells) p.set(r0 + off.row, c0 + off.col, true);
      p.placements.push_back({shape.kind, r0, c0});
      placed = true;
    }
    if (!placed)
      throw Error(ErrorKind::PlacementExhausted,
                  "shape " + std::to_string(s) + " (" + std::string(shape.name) +
                      ") found no free position after 1000 rejections");
  }
  p.tag = PatternClass::PTN;
  p.seed = seed;
  return p;
}

std::vector<std::vector<Cell>> components(const Pattern& p) {
  std::array<int, kGridCells> label;
  label.fill(-1);
  std::vector<std::vector<Cell>> out;
  for (int r = 0; r < kGridSide; ++r)
    for (int c = 0; c < kGridSide; ++c) {
      if (!p.at(r, c) || label[r * kGridSide + c] >= 0) continue;
      const int id = static_cast<int>(out.size());
      std::vector<Cell> comp;
      std::vector<Cell> stack{{r, c}};
      label[r * kGridSide + c] = id;
      while (!stack.empty()) {
        const Cell cur = stack.back();
        stack.pop_back();
        comp.push_back(cur);
        constexpr int dr[] = {-1, 1, 0, 0};
        constexpr int dc[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int nr = cur.row + dr[k];
          const int nc = cur.col + dc[k];
          if (in_grid(nr, nc) && p.at(nr, nc) && label[nr * kGridSide + nc] < 0) {
            label[nr * kGridSide + nc] = id;
            stack.push_back({nr, nc});
          }
        }
      }
      out.push_back(std::move(comp));
    }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return out;
}

bool is_connected(const Pattern& p) { return components(p).size() == 1; }

Pattern mirror_x(const Pattern& p) {
  return transformed(p, [](Cell c) { return Cell{c.row, kGridSide - 1 - c.col}; });
}

Pattern mirror_y(const Pattern& p) {
  return transformed(p, [](Cell c) { return Cell{kGridSide - 1 - c.row, c.col}; });
}

Pattern rot180(const Pattern& p) {
  return transformed(p, [](Cell c) { return Cell{kGridSide - 1 - c.row, kGridSide - 1 - c.col}; });
}

bool placements_consistent(const Pattern& p) {
  std::array<int, kGridCells> hits{};
  for (const auto& pl : p.placements) {
    for (const auto& off : basic_shape(pl.shape).cells) {
      const int r = pl.row + off.row;
      const int c = pl.col + off.col;
      if (!in_grid(r, c)) return false;
      if (++hits[r * kGridSide + c] > 1) return false;
    }
  }
  for (int i = 0; i < kGridCells; ++i)
    if ((hits[i] != 0) != (p.cells()[i] != 0)) return false;
  return true;
}

std::string to_text(const Pattern& p) {
  std::string s;
  s.reserve(kGridSide * (kGridSide + 1));
  for (int r = 0; r < kGridSide; ++r) {
    for (int c = 0; c < kGridSide; ++c) s.push_back(p.at(r, c) ? '1' : '0');
    s.push_back('\n');
  }
  return s;
}

Pattern pattern_from_text(std::string_view text) {
  Pattern p;
  int r = 0;
  std::size_t pos = 0;
  while (pos < text.size() && r < kGridSide) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = eol + 1;
    if (line.empty()) continue;
    if (line.size() != kGridSide)
      throw Error(ErrorKind::InvalidArgument,
                  "pattern line " + std::to_string(r) + " has " + std::to_string(line.size()) +
                      " characters, expected 16");
    for (int c = 0; c < kGridSide; ++c) {
      if (line[c] != '0' && line[c] != '1')
        throw Error(ErrorKind::InvalidArgument, "pattern text may only contain '0' and '1'");
      p.set(r, c, line[c] == '1');
    }
    ++r;
  }
  if (r != kGridSide)
    throw Error(ErrorKind::InvalidArgument, "pattern text has " + std::to_string(r) + " rows, expected 16");
  return p;
}

std::array<double, kGridCells> encode_pm1(const Pattern& p) {
  std::array<double, kGridCells> out;
  for (int i = 0; i < kGridCells; ++i) out[i] = p.cells()[i] ? 1.0 : -1.0;
  return out;
}

}  // namespace metasurf
