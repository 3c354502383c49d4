#include "asca/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "asca/errors.hpp"

namespace asca::metrics {

Matrix::Matrix(std::int64_t r, std::int64_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.empty()) values.assign(static_cast<std::size_t>(r * c), 0.0);
    if (static_cast<std::int64_t>(values.size()) != r * c) {
        throw ShapeError("metrics: " + std::to_string(values.size()) + " values for a " + std::to_string(r) + "x" +
                         std::to_string(c) + " matrix");
    }
}

std::vector<double> Matrix::column(std::int64_t c) const {
    std::vector<double> out(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
    return out;
}

std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("average_precision: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double hits = 0, total = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] > 0.5) {
            hits += 1;
            total += hits / static_cast<double>(rank + 1);
        }
    }
    if (hits == 0) return std::nullopt;
    return total / hits;
}

namespace {

void require_same(const Matrix& scores, const Matrix& labels, const char* op) {
    if (scores.rows != labels.rows || scores.cols != labels.cols) {
        throw ShapeError(std::string(op) + ": scores " + std::to_string(scores.rows) + "x" +
                         std::to_string(scores.cols) + " vs labels " + std::to_string(labels.rows) + "x" +
                         std::to_string(labels.cols));
    }
}

std::vector<std::optional<double>> per_class(const Matrix& scores, const Matrix& labels) {
    std::vector<std::optional<double>> ap(static_cast<std::size_t>(scores.cols));
    for (std::int64_t c = 0; c < scores.cols; ++c) ap[c] = average_precision(scores.column(c), labels.column(c));
    return ap;
}

double mean_of(const std::vector<std::optional<double>>& ap) {
    double sum = 0;
    int n = 0;
    for (const auto& a : ap) {
        if (a) {
            sum += *a;
            ++n;
        }
    }
    if (n == 0) throw EvaluationError("mAP undefined: no class has a positive label");
    return sum / n;
}

}  // namespace

double mean_average_precision(const Matrix& scores, const Matrix& labels) {
    require_same(scores, labels, "mean_average_precision");
    return mean_of(per_class(scores, labels));
}

double top1_accuracy(const Matrix& scores, const Matrix& labels) {
    require_same(scores, labels, "top1_accuracy");
    if (scores.rows == 0) throw EvaluationError("top1_accuracy: no examples");
    std::int64_t correct = 0;
    for (std::int64_t r = 0; r < scores.rows; ++r) {
        std::int64_t best = 0;
        bool any = false;
        for (std::int64_t c = 0; c < scores.cols; ++c) {
            if (scores(r, c) > scores(r, best)) best = c;
            any = any || labels(r, c) > 0.5;
        }
        if (!any) throw ContractError("top1_accuracy: row " + std::to_string(r) + " has no positive label");
        if (labels(r, best) > 0.5) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(scores.rows);
}

EvalResult evaluate(const Matrix& scores, const Matrix& labels) {
    require_same(scores, labels, "evaluate");
    EvalResult r;
    r.per_class_ap = per_class(scores, labels);
    r.map = mean_of(r.per_class_ap);
    r.top1_accuracy = top1_accuracy(scores, labels);
    r.n_examples = scores.rows;
    return r;
}

std::string EvalResult::to_json(const std::vector<std::string>& class_names) const {
    nlohmann::ordered_json j;
    j["map"] = map;
    j["top1_accuracy"] = top1_accuracy;
    j["n_examples"] = n_examples;
    auto& ap = j["per_class_ap"] = nlohmann::ordered_json::array();
    for (const auto& a : per_class_ap) ap.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json());
    if (!class_names.empty()) j["classes"] = class_names;
    return j.dump();
}

std::string EvalResult::per_class_csv(const std::vector<std::string>& class_names) const {
    std::ostringstream os;
    os.precision(17);
    os << "class,ap\n";
    for (std::size_t c = 0; c < per_class_ap.size(); ++c) {
        os << (c < class_names.size() ? class_names[c] : std::to_string(c)) << ',';
        if (per_class_ap[c]) os << *per_class_ap[c];
        os << '\n';
    }
    return os.str();
}

}  // namespace asca::metrics
