// Runs the finite-difference suite in 64-bit mode; one line per case.
#include <chrono>
#include <cstdio>

#include "gradient_suite.hpp"

int main() {
    int failures = 0;
    for (const auto& c : asca::testing::gradient_cases()) {
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        asca::testing::GradReport r;
        try {
            r = c.run();
            ok = r.rel_error <= asca::testing::kGradTolerance;
        } catch (const std::exception& e) {
            std::printf("%-28s error: %s\n", c.name.c_str(), e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%-28s rel_err=%.3e coords=%lld %.2fs %s\n", c.name.c_str(), r.rel_error,
                    static_cast<long long>(r.coords), secs, ok ? "ok" : "FAIL");
        failures += ok ? 0 : 1;
    }
    std::printf("%d failing case(s)\n", failures);
    return failures == 0 ? 0 : 1;
}
