#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace metasurf {

inline constexpr int kGridSide = 16;
inline constexpr int kGridCells = kGridSide * kGridSide;

enum class PatternClass : std::uint8_t { PLG = 0, PTN = 1, RDN = 2, OTHER = 3 };

std::string_view to_string(PatternClass c) noexcept;
PatternClass pattern_class_from_string(std::string_view name);

enum class ShapeKind : std::uint8_t {
  Square,
  Cross,
  TriangleN,
  TriangleE,
  TriangleS,
  TriangleW,
  UShape,
  HShape,
};

inline constexpr int kShapeKinds = 8;

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Fixed pixel layouts of the basic shapes used by PTN patterns, as offsets
/// from the anchor (top-left of the bounding box).
///   Square    3x3 block                                   9 px
///   Cross     plus sign in a 3x3 box                      5 px
///   Triangle  T-tetromino, apex pointing N/E/S/W           4 px
///   UShape    2x3 box with the top-middle cell removed    5 px
///   HShape    two 3-cell verticals joined at the middle   7 px
struct BasicShape {
  ShapeKind kind;
  std::string_view name;
  std::span<const Cell> cells;
  int height;
  int width;
};

const BasicShape& basic_shape(ShapeKind kind);

struct Placement {
  ShapeKind shape;
  int row;  // anchor
  int col;
  friend bool operator==(const Placement&, const Placement&) = default;
};

/// 16x16 binary occupancy grid; 1 marks a copper patch pixel.
/// Row index grows along -y, column index along +x; the incident E-field is
/// along the column axis.
class Pattern {
 public:
  Pattern() { cells_.fill(0); }

  static Pattern zeros() { return Pattern(); }
  static Pattern ones();

  std::uint8_t at(int row, int col) const { return cells_[row * kGridSide + col]; }
  void set(int row, int col, bool on) { cells_[row * kGridSide + col] = on ? 1 : 0; }

  std::span<const std::uint8_t, kGridCells> cells() const { return cells_; }
  int count_ones() const;

  PatternClass tag = PatternClass::OTHER;
  std::uint64_t seed = 0;
  /// Shape instances for PTN patterns; empty otherwise.
  std::vector<Placement> placements;

  /// Equality compares only the cell grid.
  bool same_cells(const Pattern& other) const { return cells_ == other.cells_; }

 private:
  std::array<std::uint8_t, kGridCells> cells_;
};

/// Fully random pattern: each cell independently on with probability fill_prob.
Pattern gen_rdn(std::uint64_t seed, double fill_prob = 0.5);

/// Connected polygon-like pattern. Vertices of a random star-shaped polygon
/// are snapped to grid points, the polygon is scanline-filled plus its
/// boundary cells, and stray components are bridged into the largest one.
Pattern gen_plg(std::uint64_t seed, double target_fill, int max_vertices = 8);

/// Non-overlapping combination of basic shapes.
Pattern gen_ptn(std::uint64_t seed, int min_shapes, int max_shapes);

/// True iff the on-cells form exactly one 4-connected component.
bool is_connected(const Pattern& p);

/// 4-connected components of the on-cells, largest first.
std::vector<std::vector<Cell>> components(const Pattern& p);

/// Reflection across the vertical axis (col -> 15 - col).
Pattern mirror_x(const Pattern& p);
/// Reflection across the horizontal axis (row -> 15 - row).
Pattern mirror_y(const Pattern& p);
Pattern rot180(const Pattern& p);

/// True iff the on-cells are exactly the union of the recorded placements,
/// with no overlaps and every placement inside the grid.
bool placements_consistent(const Pattern& p);

/// 16 lines of 16 '0'/'1' characters, each newline-terminated.
std::string to_text(const Pattern& p);
Pattern pattern_from_text(std::string_view text);

/// {0,1} -> {-1,+1} encoding, row-major.
std::array<double, kGridCells> encode_pm1(const Pattern& p);

}  // namespace metasurf
