#pragma once

// Built-in property battery: fast, seeded re-verification of the library's
// core numerical claims, printing one PASS/FAIL line per named property.
// Returns the number of failed properties (0 = healthy build).

#include <iosfwd>

namespace plmarl {

struct SelfcheckOptions {
    // Negative-control fixture: flips the sign of the analytic order-gradient
    // inside the gradient property, which must then fail and be named.
    bool break_gradient_sign = false;
};

int run_selfcheck(std::ostream& out, const SelfcheckOptions& opts = {});

}  // namespace plmarl
