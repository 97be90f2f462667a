#include "minn/domain.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "minn/error.hpp"

namespace minn {

struct Domain::Node {
  enum class Kind { Disk, Rect, Union, Diff } kind;
  // Disk: {cx, cy, r}; Rect: {x0, y0, x1, y1}.
  double p[4] = {0, 0, 0, 0};
  std::shared_ptr<const Node> a;
  std::shared_ptr<const Node> b;
};

namespace {

using Node = Domain::Node;

double sdf(const Node& n, Point q) {
  switch (n.kind) {
    case Node::Kind::Disk:
      return std::hypot(q.x - n.p[0], q.y - n.p[1]) - n.p[2];
    case Node::Kind::Rect: {
      const double cx = 0.5 * (n.p[0] + n.p[2]);
      const double cy = 0.5 * (n.p[1] + n.p[3]);
      const double dx = std::abs(q.x - cx) - 0.5 * (n.p[2] - n.p[0]);
      const double dy = std::abs(q.y - cy) - 0.5 * (n.p[3] - n.p[1]);
      const double outside = std::hypot(std::max(dx, 0.0), std::max(dy, 0.0));
      return outside + std::min(std::max(dx, dy), 0.0);
    }
    case Node::Kind::Union:
      return std::min(sdf(*n.a, q), sdf(*n.b, q));
    case Node::Kind::Diff:
      return std::max(sdf(*n.a, q), -sdf(*n.b, q));
  }
  return 0.0;
}

struct SdfValue {
  double value;
  Point grad;
};

// Signed distance together with the gradient of the active primitive.
SdfValue sdf_grad(const Node& n, Point q) {
  switch (n.kind) {
    case Node::Kind::Disk: {
      const Point d{q.x - n.p[0], q.y - n.p[1]};
      const double r = norm(d);
      return {r - n.p[2], r > 0.0 ? (1.0 / r) * d : Point{1.0, 0.0}};
    }
    case Node::Kind::Rect: {
      const double cx = 0.5 * (n.p[0] + n.p[2]);
      const double cy = 0.5 * (n.p[1] + n.p[3]);
      const double sx = q.x >= cx ? 1.0 : -1.0;
      const double sy = q.y >= cy ? 1.0 : -1.0;
      const double dx = std::abs(q.x - cx) - 0.5 * (n.p[2] - n.p[0]);
      const double dy = std::abs(q.y - cy) - 0.5 * (n.p[3] - n.p[1]);
      if (dx > 0.0 || dy > 0.0) {
        const Point o{std::max(dx, 0.0), std::max(dy, 0.0)};
        const double len = norm(o);
        return {len, Point{sx * o.x / len, sy * o.y / len}};
      }
      return dx >= dy ? SdfValue{dx, {sx, 0.0}} : SdfValue{dy, {0.0, sy}};
    }
    case Node::Kind::Union: {
      const auto a = sdf_grad(*n.a, q);
      const auto b = sdf_grad(*n.b, q);
      return a.value <= b.value ? a : b;
    }
    case Node::Kind::Diff: {
      const auto a = sdf_grad(*n.a, q);
      auto b = sdf_grad(*n.b, q);
      b.value = -b.value;
      b.grad = -1.0 * b.grad;
      return a.value >= b.value ? a : b;
    }
  }
  return {0.0, {0.0, 0.0}};
}

BoundingBox bbox(const Node& n) {
  switch (n.kind) {
    case Node::Kind::Disk:
      return {{n.p[0] - n.p[2], n.p[1] - n.p[2]}, {n.p[0] + n.p[2], n.p[1] + n.p[2]}};
    case Node::Kind::Rect:
      return {{n.p[0], n.p[1]}, {n.p[2], n.p[3]}};
    case Node::Kind::Union: {
      const auto ba = bbox(*n.a);
      const auto bb = bbox(*n.b);
      return {{std::min(ba.lo.x, bb.lo.x), std::min(ba.lo.y, bb.lo.y)},
              {std::max(ba.hi.x, bb.hi.x), std::max(ba.hi.y, bb.hi.y)}};
    }
    case Node::Kind::Diff:
      return bbox(*n.a);
  }
  return {};
}

void collect_leaves(const Node& n, std::vector<const Node*>& out) {
  if (n.kind == Node::Kind::Disk || n.kind == Node::Kind::Rect) {
    out.push_back(&n);
    return;
  }
  collect_leaves(*n.a, out);
  collect_leaves(*n.b, out);
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string describe(const Node& n) {
  switch (n.kind) {
    case Node::Kind::Disk:
      return "disk(" + fmt_num(n.p[0]) + "," + fmt_num(n.p[1]) + "," + fmt_num(n.p[2]) + ")";
    case Node::Kind::Rect:
      return "rect(" + fmt_num(n.p[0]) + "," + fmt_num(n.p[1]) + "," + fmt_num(n.p[2]) + "," +
             fmt_num(n.p[3]) + ")";
    case Node::Kind::Union:
      return "union(" + describe(*n.a) + "," + describe(*n.b) + ")";
    case Node::Kind::Diff:
      return "diff(" + describe(*n.a) + "," + describe(*n.b) + ")";
  }
  return {};
}

class Parser {
 public:
  explicit Parser(std::string_view text) {
    for (char c : text)
      if (!std::isspace(static_cast<unsigned char>(c))) src_.push_back(c);
  }

  std::shared_ptr<const Node> parse_all() {
    auto node = parse_expr();
    if (pos_ != src_.size()) fail("trailing characters");
    return node;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::ParseError,
                "domain descriptor '" + src_ + "' at offset " + std::to_string(pos_) + ": " + msg);
  }

  void expect(char c) {
    if (pos_ >= src_.size() || src_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string ident() {
    const auto start = pos_;
    while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
    return src_.substr(start, pos_ - start);
  }

  double number() {
    double v = 0.0;
    const char* first = src_.data() + pos_;
    const char* last = src_.data() + src_.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc()) fail("expected number");
    pos_ += static_cast<std::size_t>(ptr - first);
    return v;
  }

  std::shared_ptr<const Node> parse_expr() {
    const auto name = ident();
    if (name == "crescent" || name == "plate_holes" || name == "unit_disk" || name == "disk_square_hole") {
      return Parser(preset(name)).parse_all();
    }
    auto node = std::make_shared<Node>();
    expect('(');
    if (name == "disk") {
      node->kind = Node::Kind::Disk;
      for (int i = 0; i < 3; ++i) {
        if (i) expect(',');
        node->p[i] = number();
      }
      if (!(node->p[2] > 0.0)) fail("disk radius must be positive");
    } else if (name == "rect") {
      node->kind = Node::Kind::Rect;
      for (int i = 0; i < 4; ++i) {
        if (i) expect(',');
        node->p[i] = number();
      }
      if (!(node->p[2] > node->p[0] && node->p[3] > node->p[1])) fail("rect corners out of order");
    } else if (name == "union" || name == "diff") {
      node->kind = name == "union" ? Node::Kind::Union : Node::Kind::Diff;
      node->a = parse_expr();
      expect(',');
      node->b = parse_expr();
    } else {
      fail("unknown primitive '" + name + "'");
    }
    expect(')');
    return node;
  }

  static std::string preset(const std::string& name) {
    if (name == "crescent") return "diff(disk(0,0,1),disk(-0.75,0,0.7))";
    if (name == "plate_holes")
      return "diff(diff(rect(-2,-1.5,2,1.5),rect(-0.75,0.5,0.75,1.5)),rect(-0.75,-1.5,0.75,-0.5))";
    if (name == "unit_disk") return "disk(0,0,1)";
    return "diff(disk(0,0,1),rect(-0.4,-0.4,0.4,0.4))";
  }

  std::string src_;
  std::size_t pos_ = 0;
};

}  // namespace

Domain Domain::disk(Point center, double radius) {
  if (!(radius > 0.0)) throw Error(ErrorCode::ParseError, "disk radius must be positive");
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Disk;
  n->p[0] = center.x;
  n->p[1] = center.y;
  n->p[2] = radius;
  return Domain(std::move(n));
}

Domain Domain::rectangle(Point corner_min, Point corner_max) {
  if (!(corner_max.x > corner_min.x && corner_max.y > corner_min.y))
    throw Error(ErrorCode::ParseError, "rectangle corners out of order");
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Rect;
  n->p[0] = corner_min.x;
  n->p[1] = corner_min.y;
  n->p[2] = corner_max.x;
  n->p[3] = corner_max.y;
  return Domain(std::move(n));
}

Domain Domain::unite(const Domain& a, const Domain& b) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Union;
  n->a = a.root_;
  n->b = b.root_;
  return Domain(std::move(n));
}

Domain Domain::subtract(const Domain& a, const Domain& b) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Diff;
  n->a = a.root_;
  n->b = b.root_;
  return Domain(std::move(n));
}

Domain Domain::parse(std::string_view text) { return Domain(Parser(text).parse_all()); }

bool Domain::contains(Point p, double tol) const { return sdf(*root_, p) <= tol; }

double Domain::signed_distance(Point p) const { return sdf(*root_, p); }

Point Domain::project_to_boundary(Point p) const {
  const auto box = bounds();
  const double tol = 1e-15 * std::max({1.0, box.hi.x - box.lo.x, box.hi.y - box.lo.y});
  for (int it = 0; it < 16; ++it) {
    const auto s = sdf_grad(*root_, p);
    if (std::abs(s.value) <= tol) break;
    p = p - s.value * s.grad;
  }
  return p;
}

BoundingBox Domain::bounds() const { return bbox(*root_); }

std::vector<Point> Domain::sample_boundary(double spacing) const {
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidStep, "boundary spacing must be positive");
  std::vector<const Node*> leaves;
  collect_leaves(*root_, leaves);
  const auto box = bounds();
  const double scale = std::max(box.hi.x - box.lo.x, box.hi.y - box.lo.y);
  const double tol = 1e-12 * std::max(1.0, scale);

  std::vector<Point> out;
  auto keep = [&](Point q) {
    if (std::abs(sdf(*root_, q)) <= tol) out.push_back(q);
  };
  for (const Node* leaf : leaves) {
    if (leaf->kind == Node::Kind::Disk) {
      const double r = leaf->p[2];
      const auto n = std::max<long>(8, static_cast<long>(std::ceil(2.0 * std::numbers::pi * r / spacing)));
      for (long k = 0; k < n; ++k) {
        const double t = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        keep({leaf->p[0] + r * std::cos(t), leaf->p[1] + r * std::sin(t)});
      }
    } else {
      const Point c[4] = {{leaf->p[0], leaf->p[1]},
                          {leaf->p[2], leaf->p[1]},
                          {leaf->p[2], leaf->p[3]},
                          {leaf->p[0], leaf->p[3]}};
      for (int s = 0; s < 4; ++s) {
        const Point a = c[s];
        const Point b = c[(s + 1) % 4];
        const auto n = std::max<long>(1, static_cast<long>(std::ceil(dist(a, b) / spacing)));
        for (long k = 0; k < n; ++k) {
          const double t = static_cast<double>(k) / static_cast<double>(n);
          keep(a + t * (b - a));
        }
      }
    }
  }
  return out;
}

std::string Domain::descriptor() const { return describe(*root_); }

}  // namespace minn
