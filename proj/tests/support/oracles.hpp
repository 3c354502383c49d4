#pragma once

// Reference implementations written independently of the library, shared by
// the unit tests and the acceptance binary.

#include <cmath>
#include <cstddef>
#include <vector>

namespace asca::oracle {

// Mel filterbank: centers from the HTK formula, then the piecewise-linear
// triangle evaluated at every bin frequency. Row-major n_mels x (n_fft/2+1).
inline std::vector<double> triangle_filterbank(int n_mels, double fmin, double fmax, int rate, int n_fft) {
    const auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    const auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    std::vector<double> pts(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i) pts[i] = hz(mel(fmin) + (mel(fmax) - mel(fmin)) * i / (n_mels + 1));
    const int bins = n_fft / 2 + 1;
    std::vector<double> w(static_cast<std::size_t>(n_mels) * bins, 0.0);
    for (int m = 0; m < n_mels; ++m) {
        const double l = pts[m], c = pts[m + 1], r = pts[m + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * rate / n_fft;
            double v = 0;
            if (f > l && f <= c) v = (f - l) / (c - l);
            else if (f > c && f < r) v = (r - f) / (r - c);
            w[static_cast<std::size_t>(m) * bins + k] = v;
        }
    }
    return w;
}

// Precision at rank per positive without sorting: the rank of i is one plus
// the number of items ordered before it (higher score, or equal score and
// lower index). Terms are summed in rank order so the result is exact.
// Requires at least one positive.
inline double average_precision(const std::vector<double>& s, const std::vector<double>& y) {
    const std::size_t n = s.size();
    auto before = [&](std::size_t j, std::size_t i) { return s[j] > s[i] || (s[j] == s[i] && j < i); };
    std::vector<double> term(n + 1, -1);
    int positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != 1) continue;
        ++positives;
        int rank = 1, hits = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !before(j, i)) continue;
            ++rank;
            if (y[j] == 1) ++hits;
        }
        term[rank] = static_cast<double>(hits) / rank;
    }
    double sum = 0;
    for (double t : term) {
        if (t >= 0) sum += t;
    }
    return sum / positives;
}

// Row-major n x k; mean over columns with a positive, -1 when none has one.
inline double mean_average_precision(const std::vector<double>& s, const std::vector<double>& y, int n, int k) {
    double sum = 0;
    int used = 0;
    for (int c = 0; c < k; ++c) {
        std::vector<double> sc(n), yc(n);
        bool any = false;
        for (int r = 0; r < n; ++r) {
            sc[r] = s[static_cast<std::size_t>(r) * k + c];
            yc[r] = y[static_cast<std::size_t>(r) * k + c];
            any = any || yc[r] == 1;
        }
        if (!any) continue;
        sum += average_precision(sc, yc);
        ++used;
    }
    return used == 0 ? -1 : sum / used;
}

// Fraction of rows whose first maximal score is a positive.
inline double top1_accuracy(const std::vector<double>& s, const std::vector<double>& y, int n, int k) {
    int correct = 0;
    for (int r = 0; r < n; ++r) {
        int best = 0;
        for (int c = 1; c < k; ++c) {
            if (s[static_cast<std::size_t>(r) * k + c] > s[static_cast<std::size_t>(r) * k + best]) best = c;
        }
        correct += y[static_cast<std::size_t>(r) * k + best] == 1;
    }
    return static_cast<double>(correct) / n;
}

}  // namespace asca::oracle
