#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "minn/geometry.hpp"

namespace minn {

/// Constructive-geometry region in the plane built from disks and
/// axis-aligned rectangles with union and difference.
///
/// Membership is decided through a signed distance bound (negative inside,
/// zero on the boundary). The value is exact for each primitive and keeps
/// the correct sign under min/max composition, which is all the mesher and
/// the boundary sampler need.
///
/// Descriptor grammar (whitespace ignored):
///   disk(cx,cy,r) | rect(x0,y0,x1,y1) | union(A,B) | diff(A,B)
/// plus the presets crescent, plate_holes, unit_disk, disk_square_hole.
class Domain {
 public:
  static Domain disk(Point center, double radius);
  static Domain rectangle(Point corner_min, Point corner_max);
  static Domain unite(const Domain& a, const Domain& b);
  static Domain subtract(const Domain& a, const Domain& b);

  /// Parses a descriptor or a preset name. Throws Error(ParseError).
  static Domain parse(std::string_view text);

  /// Closed membership: points with signed distance <= tol are inside.
  bool contains(Point p, double tol = 1e-12) const;
  double signed_distance(Point p) const;
  BoundingBox bounds() const;

  /// Steps p - d(p) grad d(p) along the active primitive until the point
  /// sits on the boundary. One step suffices away from corners.
  Point project_to_boundary(Point p) const;

  /// Points on the boundary of the region, spaced at most `spacing` apart
  /// along each primitive edge or arc. Every returned point has signed
  /// distance zero up to rounding.
  std::vector<Point> sample_boundary(double spacing) const;

  /// Round-trippable descriptor (17 significant digits).
  std::string descriptor() const;

  struct Node;

 private:
  explicit Domain(std::shared_ptr<const Node> root) : root_(std::move(root)) {}
  std::shared_ptr<const Node> root_;
};

}  // namespace minn
