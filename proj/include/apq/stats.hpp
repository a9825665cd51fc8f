#pragma once

namespace apq::stats {

double normal_cdf(double x);
/// Upper tail 1 - Phi(x), accurate for large x.
double normal_sf(double x);
double normal_quantile(double p);
double student_t_quantile(double p, double nu);
/// P(X > x) for X ~ chi-square(dof).
double chi_square_sf(double x, double dof);

}  // namespace apq::stats
