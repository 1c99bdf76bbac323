#include "phimesa/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "phimesa/common.hpp"

namespace phimesa::analysis {

namespace {

constexpr double kEps = 1e-30;

void check_pair(const std::vector<double>& x, const std::vector<double>& y,
                size_t min_n, const char* who) {
    if (x.size() != y.size())
        throw ValidationError(std::string(who) + ": series lengths differ");
    if (x.size() < min_n)
        throw InsufficientDataError(std::string(who) + ": needs at least " +
                                    std::to_string(min_n) + " points");
    for (double v : x)
        if (!std::isfinite(v)) throw ValidationError(std::string(who) + ": non-finite x value");
    for (double v : y)
        if (!std::isfinite(v)) throw ValidationError(std::string(who) + ": non-finite y value");
}

// Least squares via normal equations with partial-pivot elimination; designs
// here are tiny (at most 2*lag + 1 columns). Returns the residual sum of
// squares. Throws on singular designs.
double least_squares_rss(const std::vector<std::vector<double>>& cols,
                         const std::vector<double>& y) {
    const size_t k = cols.size();
    const size_t n = y.size();
    std::vector<std::vector<double>> a(k, std::vector<double>(k + 1, 0.0));
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = i; j < k; ++j) {
            double s = 0.0;
            for (size_t t = 0; t < n; ++t) s += cols[i][t] * cols[j][t];
            a[i][j] = s;
            a[j][i] = s;
        }
        double s = 0.0;
        for (size_t t = 0; t < n; ++t) s += cols[i][t] * y[t];
        a[i][k] = s;
    }
    double scale = 0.0;
    for (size_t i = 0; i < k; ++i) scale = std::max(scale, std::abs(a[i][i]));
    for (size_t col = 0; col < k; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < k; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) <= 1e-12 * std::max(scale, 1.0))
            throw ValidationError("regression: singular design (constant or collinear series)");
        std::swap(a[piv], a[col]);
        for (size_t r = 0; r < k; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (size_t c = col; c <= k; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::vector<double> beta(k);
    for (size_t i = 0; i < k; ++i) beta[i] = a[i][k] / a[i][i];
    double rss = 0.0;
    for (size_t t = 0; t < n; ++t) {
        double fit = 0.0;
        for (size_t i = 0; i < k; ++i) fit += beta[i] * cols[i][t];
        const double r = y[t] - fit;
        rss += r * r;
    }
    return rss;
}

// Continued-fraction core for the incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kEps) d = kEps;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kEps) d = kEps;
        c = 1.0 + aa / c;
        if (std::abs(c) < kEps) c = kEps;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kEps) d = kEps;
        c = 1.0 + aa / c;
        if (std::abs(c) < kEps) c = kEps;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-12) return h;
    }
    throw NumericError("incomplete beta: continued fraction did not converge");
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream ss;
    ss.precision(precision);
    ss << v;
    return ss.str();
}

}  // namespace

OlsFit ols(const std::vector<double>& x, const std::vector<double>& y) {
    check_pair(x, y, 2, "ols");
    const int64_t n = static_cast<int64_t>(x.size());
    const double nd = static_cast<double>(n);
    double mx = 0.0, my = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= nd;
    my /= nd;
    double sxx = 0.0, sxy = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0) throw ValidationError("ols: x is constant");
    OlsFit fit;
    fit.n = n;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double syy = 0.0;
    for (int64_t i = 0; i < n; ++i) syy += (y[i] - my) * (y[i] - my);
    if (syy > 0.0) {
        fit.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    } else {
        fit.r = std::numeric_limits<double>::quiet_NaN();
    }
    if (n >= 3) {
        double rss = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double r = y[i] - (fit.intercept + fit.slope * x[i]);
            rss += r * r;
        }
        const double s2 = rss / static_cast<double>(n - 2);
        fit.slope_se = std::sqrt(s2 / sxx);
        fit.intercept_se = std::sqrt(s2 * (1.0 / nd + mx * mx / sxx));
    } else {
        fit.slope_se = std::numeric_limits<double>::quiet_NaN();
        fit.intercept_se = std::numeric_limits<double>::quiet_NaN();
    }
    return fit;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    check_pair(x, y, 2, "pearson");
    const int64_t n = static_cast<int64_t>(x.size());
    double mx = 0.0, my = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) throw ValidationError("pearson: constant series");
    double r = sxy / std::sqrt(sxx * syy);
    if (r > 1.0) r = 1.0;
    if (r < -1.0) r = -1.0;
    return r;
}

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta: a, b must be positive");
    if (x < 0.0 || x > 1.0) throw ValidationError("incomplete beta: x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    // The continued fraction converges fast for x < (a + 1) / (a + b + 2);
    // otherwise use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a).
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double f_tail_probability(double f, double d1, double d2) {
    if (!(d1 > 0.0) || !(d2 > 0.0))
        throw ValidationError("f tail: degrees of freedom must be positive");
    if (std::isinf(f)) return 0.0;
    if (!(f >= 0.0)) throw ValidationError("f tail: statistic must be >= 0");
    return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

GrangerResult granger(const std::vector<double>& x, const std::vector<double>& y,
                      int32_t lag) {
    if (lag < 1) throw ValidationError("granger: lag must be >= 1");
    check_pair(x, y, static_cast<size_t>(lag) + 4, "granger");
    const int64_t n = static_cast<int64_t>(y.size());
    const int64_t m = n - lag;  // usable observations
    const int64_t dof_u = m - (2 * lag + 1);
    if (dof_u < 1)
        throw InsufficientDataError("granger: too few observations for lag " +
                                    std::to_string(lag));

    std::vector<double> target(m);
    std::vector<std::vector<double>> restricted;
    restricted.push_back(std::vector<double>(m, 1.0));
    for (int32_t l = 1; l <= lag; ++l) restricted.push_back(std::vector<double>(m));
    std::vector<std::vector<double>> unrestricted = restricted;
    for (int32_t l = 1; l <= lag; ++l) unrestricted.push_back(std::vector<double>(m));
    for (int64_t t = 0; t < m; ++t) {
        target[t] = y[t + lag];
        for (int32_t l = 1; l <= lag; ++l) {
            restricted[l][t] = y[t + lag - l];
            unrestricted[l][t] = y[t + lag - l];
            unrestricted[lag + l][t] = x[t + lag - l];
        }
    }
    const double rss_r = least_squares_rss(restricted, target);
    const double rss_u = least_squares_rss(unrestricted, target);

    double tss = 0.0;
    double mean = 0.0;
    for (double v : target) mean += v;
    mean /= static_cast<double>(m);
    for (double v : target) tss += (v - mean) * (v - mean);

    GrangerResult res;
    res.lag = lag;
    res.n = m;
    if (rss_u <= 1e-14 * std::max(tss, 1.0)) {
        res.f = std::numeric_limits<double>::infinity();
        res.p = 0.0;
        return res;
    }
    const double num = (rss_r - rss_u) / static_cast<double>(lag);
    const double den = rss_u / static_cast<double>(dof_u);
    res.f = std::max(num / den, 0.0);
    res.p = f_tail_probability(res.f, static_cast<double>(lag), static_cast<double>(dof_u));
    return res;
}

std::string scatter_svg(const std::vector<double>& ln_ppl,
                        const std::vector<double>& phi_hat, const OlsFit& fit) {
    check_pair(ln_ppl, phi_hat, 2, "scatter");
    const double W = 800.0, H = 600.0;
    const double ml = 70.0, mr = 20.0, mt = 20.0, mb = 50.0;
    double xmin = ln_ppl[0], xmax = ln_ppl[0], ymin = phi_hat[0], ymax = phi_hat[0];
    for (double v : ln_ppl) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    }
    for (double v : phi_hat) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
    }
    if (xmax == xmin) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double xpad = 0.05 * (xmax - xmin);
    const double ypad = 0.05 * (ymax - ymin);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;
    auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto sy = [&](double v) { return H - mb - (v - ymin) / (ymax - ymin) * (H - mt - mb); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" "
           "viewBox=\"0 0 800 600\">\n";
    svg << "<rect width=\"800\" height=\"600\" fill=\"white\"/>\n";
    svg << "<rect x=\"" << fmt(ml) << "\" y=\"" << fmt(mt) << "\" width=\"" << fmt(W - ml - mr)
        << "\" height=\"" << fmt(H - mt - mb)
        << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 5.0;
        const double fy = ymin + (ymax - ymin) * i / 5.0;
        svg << "<line x1=\"" << fmt(sx(fx)) << "\" y1=\"" << fmt(H - mb) << "\" x2=\""
            << fmt(sx(fx)) << "\" y2=\"" << fmt(H - mb + 5) << "\" stroke=\"#444\"/>\n";
        svg << "<text x=\"" << fmt(sx(fx)) << "\" y=\"" << fmt(H - mb + 18)
            << "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#222\">" << fmt(fx, 4)
            << "</text>\n";
        svg << "<line x1=\"" << fmt(ml - 5) << "\" y1=\"" << fmt(sy(fy)) << "\" x2=\"" << fmt(ml)
            << "\" y2=\"" << fmt(sy(fy)) << "\" stroke=\"#444\"/>\n";
        svg << "<text x=\"" << fmt(ml - 8) << "\" y=\"" << fmt(sy(fy) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\" fill=\"#222\">" << fmt(fy, 4)
            << "</text>\n";
    }
    svg << "<text x=\"" << fmt(ml + (W - ml - mr) / 2) << "\" y=\"" << fmt(H - 12)
        << "\" font-size=\"14\" text-anchor=\"middle\" fill=\"#000\">ln(PPL)</text>\n";
    svg << "<text x=\"18\" y=\"" << fmt(mt + (H - mt - mb) / 2)
        << "\" font-size=\"14\" text-anchor=\"middle\" fill=\"#000\" transform=\"rotate(-90 18 "
        << fmt(mt + (H - mt - mb) / 2) << ")\">phi_hat (nats)</text>\n";
    for (size_t i = 0; i < ln_ppl.size(); ++i) {
        svg << "<circle cx=\"" << fmt(sx(ln_ppl[i])) << "\" cy=\"" << fmt(sy(phi_hat[i]))
            << "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>\n";
    }
    const double yl = fit.intercept + fit.slope * xmin;
    const double yr = fit.intercept + fit.slope * xmax;
    svg << "<line x1=\"" << fmt(sx(xmin)) << "\" y1=\"" << fmt(sy(yl)) << "\" x2=\""
        << fmt(sx(xmax)) << "\" y2=\"" << fmt(sy(yr))
        << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace phimesa::analysis
