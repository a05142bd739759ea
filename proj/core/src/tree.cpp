#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "histofuse/error.hpp"
#include "histofuse/log.hpp"
#include "histofuse/tree.hpp"
#include "model_impl.hpp"

namespace histofuse {

const TreeNode& DecisionTree::leaf_for(const double* x) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[n.feature] <= n.threshold ? n.left : n.right);
  }
  return nodes[i];
}

std::size_t DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  // Children always come after their parent.
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) {
      best = std::max(best, d[i]);
      continue;
    }
    d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
    d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
  }
  return best;
}

std::size_t DecisionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

namespace detail {

namespace {

struct GiniCriterion {
  const int* y;
  int k;
  std::size_t width() const { return static_cast<std::size_t>(k); }
  void add(double* s, std::size_t row) const { s[y[row]] += 1.0; }
  bool pure(const double* s, double n) const {
    return std::any_of(s, s + k, [n](double c) { return c == n; });
  }
  // Minimising weighted Gini is maximising sum_c n_c^2 / n per child.
  double split_quality(const double* left, const double* total, double nl, double n) const {
    double ql = 0.0;
    double qr = 0.0;
    for (int c = 0; c < k; ++c) {
      const double r = total[c] - left[c];
      ql += left[c] * left[c];
      qr += r * r;
    }
    return ql / nl + qr / (n - nl);
  }
};

struct SquaredErrorCriterion {
  const double* t;
  std::size_t width() const { return 3; }  // sum, min, max
  void add(double* s, std::size_t row) const {
    const double v = t[row];
    if (s[1] > s[2]) {
      s[1] = v;
      s[2] = v;
    } else {
      s[1] = std::min(s[1], v);
      s[2] = std::max(s[2], v);
    }
    s[0] += v;
  }
  bool pure(const double* s, double) const { return s[1] == s[2]; }
  double split_quality(const double* left, const double* total, double nl, double n) const {
    const double r = total[0] - left[0];
    return left[0] * left[0] / nl + r * r / (n - nl);
  }
};

// Stats buffers start as {0, +inf, -inf} so that min > max marks "empty".
void reset_stats(double* s, std::size_t w, bool with_range) {
  std::fill(s, s + w, 0.0);
  if (with_range) {
    s[1] = std::numeric_limits<double>::infinity();
    s[2] = -std::numeric_limits<double>::infinity();
  }
}

template <typename Crit>
DecisionTree grow(const TrainingSet& data, const SortedColumns& cols, std::vector<int>& node_of,
                  const Crit& crit, int max_depth, int min_leaf, bool with_range) {
  const std::size_t w = crit.width();
  DecisionTree tree;
  tree.nodes.emplace_back();
  std::vector<int> frontier = {0};
  std::vector<int> slot_of(1, 0);
  for (int depth = 0; !frontier.empty(); ++depth) {
    const std::size_t slots = frontier.size();
    slot_of.assign(tree.nodes.size(), -1);
    for (std::size_t s = 0; s < slots; ++s) slot_of[static_cast<std::size_t>(frontier[s])] = static_cast<int>(s);

    std::vector<double> totals(slots * w);
    for (std::size_t s = 0; s < slots; ++s) reset_stats(totals.data() + s * w, w, with_range);
    std::vector<double> counts(slots, 0.0);
    for (std::size_t r = 0; r < data.rows; ++r) {
      const int node = node_of[r];
      if (node < 0) continue;
      const int s = slot_of[static_cast<std::size_t>(node)];
      if (s < 0) continue;
      crit.add(totals.data() + static_cast<std::size_t>(s) * w, r);
      counts[static_cast<std::size_t>(s)] += 1.0;
    }
    std::vector<char> active(slots, 0);
    bool any = false;
    for (std::size_t s = 0; s < slots; ++s) {
      active[s] = depth < max_depth && counts[s] >= 2.0 * min_leaf &&
                  !crit.pure(totals.data() + s * w, counts[s]);
      any = any || active[s];
    }
    if (!any) break;

    std::vector<double> best_q(slots, -std::numeric_limits<double>::infinity());
    std::vector<int> best_f(slots, -1);
    std::vector<double> best_thr(slots, 0.0);
    std::vector<double> left(slots * w);
    std::vector<double> lcount(slots);
    std::vector<double> last(slots);
    for (std::size_t f = 0; f < data.dim; ++f) {
      for (std::size_t s = 0; s < slots; ++s) {
        if (!active[s]) continue;
        reset_stats(left.data() + s * w, w, with_range);
        lcount[s] = 0.0;
      }
      for (const std::uint32_t r : cols.order(f)) {
        const int node = node_of[r];
        if (node < 0) continue;
        const int si = slot_of[static_cast<std::size_t>(node)];
        if (si < 0 || !active[static_cast<std::size_t>(si)]) continue;
        const auto s = static_cast<std::size_t>(si);
        const double v = data.row(r)[f];
        if (lcount[s] >= min_leaf && counts[s] - lcount[s] >= min_leaf && v > last[s]) {
          const double q = crit.split_quality(left.data() + s * w, totals.data() + s * w,
                                              lcount[s], counts[s]);
          // Strict improvement keeps the lowest feature, then lowest threshold.
          if (best_f[s] < 0 || q > best_q[s] + 1e-12 * std::max(1.0, std::abs(best_q[s]))) {
            best_q[s] = q;
            best_f[s] = static_cast<int>(f);
            best_thr[s] = 0.5 * (last[s] + v);
          }
        }
        crit.add(left.data() + s * w, r);
        lcount[s] += 1.0;
        last[s] = v;
      }
    }

    std::vector<int> next;
    for (std::size_t s = 0; s < slots; ++s) {
      if (best_f[s] < 0) continue;
      const auto id = static_cast<std::size_t>(frontier[s]);
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      tree.nodes[id].feature = best_f[s];
      tree.nodes[id].threshold = best_thr[s];
      tree.nodes[id].left = l;
      tree.nodes[id].right = l + 1;
      next.push_back(l);
      next.push_back(l + 1);
    }
    for (std::size_t r = 0; r < data.rows; ++r) {
      const int node = node_of[r];
      if (node < 0) continue;
      const auto& n = tree.nodes[static_cast<std::size_t>(node)];
      if (n.is_leaf()) continue;
      node_of[r] = data.row(r)[n.feature] <= n.threshold ? n.left : n.right;
    }
    frontier = std::move(next);
  }
  return tree;
}

std::vector<std::vector<std::uint32_t>> rows_per_node(const std::vector<int>& node_of,
                                                      std::size_t nodes) {
  std::vector<std::vector<std::uint32_t>> out(nodes);
  for (std::size_t r = 0; r < node_of.size(); ++r) {
    if (node_of[r] >= 0) out[static_cast<std::size_t>(node_of[r])].push_back(static_cast<std::uint32_t>(r));
  }
  return out;
}

}  // namespace

SortedColumns::SortedColumns(const TrainingSet& data) : rows_(data.rows) {
  order_.resize(data.rows * data.dim);
  for (std::size_t f = 0; f < data.dim; ++f) {
    auto* o = order_.data() + f * rows_;
    std::iota(o, o + rows_, 0U);
    std::stable_sort(o, o + rows_, [&](std::uint32_t a, std::uint32_t b) {
      return data.row(a)[f] < data.row(b)[f];
    });
  }
}

DecisionTree grow_gini_tree(const TrainingSet& data, const SortedColumns& cols, int max_depth,
                            int min_leaf) {
  std::vector<int> node_of(data.rows, 0);
  GiniCriterion crit{data.y.data(), data.n_classes};
  DecisionTree tree = grow(data, cols, node_of, crit, max_depth, min_leaf, false);
  const auto rows = rows_per_node(node_of, tree.nodes.size());
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    if (!tree.nodes[i].is_leaf()) continue;
    auto& v = tree.nodes[i].value;
    v.assign(static_cast<std::size_t>(data.n_classes), 0.0);
    for (auto r : rows[i]) v[static_cast<std::size_t>(data.y[r])] += 1.0;
    const auto n = static_cast<double>(rows[i].size());
    for (auto& c : v) c /= n;
  }
  return tree;
}

DecisionTree grow_regression_tree(
    const TrainingSet& data, const SortedColumns& cols, std::span<const double> target,
    std::span<const char> in_sample, int max_depth, int min_leaf,
    const std::function<double(std::span<const std::uint32_t>)>& leaf_value) {
  std::vector<int> node_of(data.rows);
  for (std::size_t r = 0; r < data.rows; ++r) node_of[r] = in_sample[r] ? 0 : -1;
  SquaredErrorCriterion crit{target.data()};
  DecisionTree tree = grow(data, cols, node_of, crit, max_depth, min_leaf, true);
  const auto rows = rows_per_node(node_of, tree.nodes.size());
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    if (tree.nodes[i].is_leaf()) tree.nodes[i].value = {leaf_value(rows[i])};
  }
  return tree;
}

void write_tree(ByteWriter& w, const DecisionTree& tree) {
  w.u32(static_cast<std::uint32_t>(tree.nodes.size()));
  for (const auto& n : tree.nodes) {
    w.u32(static_cast<std::uint32_t>(n.feature));
    w.f64(n.threshold);
    w.u32(static_cast<std::uint32_t>(n.left));
    w.u32(static_cast<std::uint32_t>(n.right));
    w.f64s(n.value);
  }
}

DecisionTree read_tree(ByteReader& r, std::size_t dim) {
  DecisionTree tree;
  const auto count = r.u32();
  if (count == 0) throw InputError("tree has no nodes");
  tree.nodes.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& n = tree.nodes[i];
    n.feature = static_cast<std::int32_t>(r.u32());
    n.threshold = r.f64();
    n.left = static_cast<std::int32_t>(r.u32());
    n.right = static_cast<std::int32_t>(r.u32());
    n.value = r.f64s();
    if (!n.is_leaf()) {
      const auto in_range = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(count); };
      if (static_cast<std::size_t>(n.feature) >= dim || !in_range(n.left) || !in_range(n.right)) {
        throw InputError("tree node " + std::to_string(i) + " is malformed");
      }
    }
  }
  return tree;
}

void TreeModel::scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
                       double* out) const {
  const auto k = static_cast<std::size_t>(n_classes);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto& v = tree.leaf_for(x + i * dim).value;
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(k, v.size())), out + i * k);
  }
}

}  // namespace detail

TrainedModel train_tree(const TrainingSet& data, const TreeParams& hp) {
  if (data.rows < 1) throw InputError("tree: training set is empty");
  if (hp.max_depth < 0) throw InputError("tree: max_depth must be >= 0");
  if (hp.min_leaf < 1) throw InputError("tree: min_leaf must be >= 1");
  std::vector<char> seen(static_cast<std::size_t>(data.n_classes), 0);
  for (int c : data.y) seen[static_cast<std::size_t>(c)] = 1;
  if (std::count(seen.begin(), seen.end(), 1) < 2) {
    log_warning("tree: training labels hold a single class; the model is one leaf");
  }
  const detail::SortedColumns cols(data);
  auto tree = detail::grow_gini_tree(data, cols, hp.max_depth, hp.min_leaf);
  return {std::make_shared<detail::TreeModel>(std::move(tree)), hp, data.n_classes, data.dim};
}

TrainedModel make_tree_model(DecisionTree tree, int n_classes, std::size_t feature_dim,
                             TreeParams hp) {
  if (tree.nodes.empty()) throw InputError("tree has no nodes");
  for (const auto& n : tree.nodes) {
    if (n.is_leaf() && n.value.size() != static_cast<std::size_t>(n_classes)) {
      throw InputError("tree leaf value must have one entry per class");
    }
  }
  return {std::make_shared<detail::TreeModel>(std::move(tree)), hp, n_classes, feature_dim};
}

const DecisionTree& tree_of(const TrainedModel& model) {
  const auto* t = dynamic_cast<const detail::TreeModel*>(&model.impl());
  if (t == nullptr) throw InputError("model is not a decision tree");
  return t->tree;
}

}  // namespace histofuse
