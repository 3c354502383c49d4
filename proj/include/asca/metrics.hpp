#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace asca::metrics {

// Row-major N x K matrix of scores or 0/1 labels.
struct Matrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::int64_t r, std::int64_t c, std::vector<double> v = {});
    double operator()(std::int64_t r, std::int64_t c) const { return values[static_cast<std::size_t>(r * cols + c)]; }
    double& operator()(std::int64_t r, std::int64_t c) { return values[static_cast<std::size_t>(r * cols + c)]; }
    std::vector<double> column(std::int64_t c) const;
};

// Ranks by descending score, ties by ascending index, and averages the
// precision at each positive. nullopt when there are no positives.
std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<double>& labels);

// Mean AP over classes with at least one positive. Throws EvaluationError
// when no class has a positive.
double mean_average_precision(const Matrix& scores, const Matrix& labels);

// Fraction of rows whose argmax (lowest index on ties) is a positive.
// Every row needs at least one positive (ContractError otherwise).
double top1_accuracy(const Matrix& scores, const Matrix& labels);

struct EvalResult {
    std::vector<std::optional<double>> per_class_ap;  // nullopt: no positives
    double map = 0;
    double top1_accuracy = 0;
    std::int64_t n_examples = 0;

    std::string to_json(const std::vector<std::string>& class_names = {}) const;
    // "class,ap" rows; classes without positives get an empty ap field.
    std::string per_class_csv(const std::vector<std::string>& class_names = {}) const;
};

EvalResult evaluate(const Matrix& scores, const Matrix& labels);

}  // namespace asca::metrics
