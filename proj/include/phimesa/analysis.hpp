#pragma once

// Run-log statistics: simple linear regression with standard errors, Pearson
// correlation, and a bivariate Granger F-test. Everything is closed-form
// double precision; the F tail probability comes from the regularised
// incomplete beta function (continued fraction, |error| < 1e-8).

#include <cstdint>
#include <string>
#include <vector>

namespace phimesa::analysis {

struct OlsFit {
    double slope = 0.0;
    double slope_se = 0.0;
    double intercept = 0.0;
    double intercept_se = 0.0;
    double r = 0.0;  // Pearson coefficient of the fitted pair (NaN if y constant)
    int64_t n = 0;
};

// Ordinary least squares of y on x (one regressor plus intercept). Needs
// n >= 2 and non-constant x; standard errors use n - 2 degrees of freedom and
// are NaN when n == 2.
OlsFit ols(const std::vector<double>& x, const std::vector<double>& y);

// Pearson correlation coefficient; errors on constant input.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct GrangerResult {
    double f = 0.0;  // +inf when the unrestricted fit is exact
    double p = 1.0;
    int32_t lag = 1;
    int64_t n = 0;  // observations entering the regressions
};

// Does x Granger-cause y? Restricted model regresses y_t on its own lags,
// unrestricted adds lags of x; F compares them. Series must be longer than
// lag + 3.
GrangerResult granger(const std::vector<double>& x, const std::vector<double>& y,
                      int32_t lag = 1);

// P(F_{d1,d2} > f): upper tail of the F distribution.
double f_tail_probability(double f, double d1, double d2);

// Regularised incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

// Deterministic 800x600 scatter of (ln PPL, phi_hat) with the OLS line.
std::string scatter_svg(const std::vector<double>& ln_ppl,
                        const std::vector<double>& phi_hat, const OlsFit& fit);

}  // namespace phimesa::analysis
