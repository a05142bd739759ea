#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace histofuse {

/// Fills row i of the kernel matrix.
using KernelRowFn = std::function<void(std::size_t i, std::span<double> row)>;

struct BinarySvmResult {
  std::vector<double> alpha;  // 0 <= alpha_i <= C
  double bias = 0.0;          // f(x) = sum_i alpha_i y_i k(x_i, x) + bias
  long long iterations = 0;
  double kkt_gap = 0.0;       // maximal violating pair gap at exit
};

/// Soft-margin dual solved by SMO with second-order working-set selection.
/// `labels` are +1 / -1. Kernel rows are cached up to `cache_rows` rows.
/// `diagonal` holds k(x_i, x_i); when empty it is read from the kernel rows.
/// Throws NumericError if the KKT gap is still above `tolerance` after
/// `max_iter` iterations.
BinarySvmResult solve_binary_svm(std::size_t n, const KernelRowFn& kernel_row,
                                 std::span<const int> labels, double C, double tolerance,
                                 long long max_iter, std::size_t cache_rows = 4096,
                                 std::span<const double> diagonal = {});

}  // namespace histofuse
