#pragma once

#include <stdexcept>
#include <string>

namespace switchlab {

// Base class; the CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input (schema, shapes, values). Exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

class TiMismatch : public InputError {
public:
    using InputError::InputError;
};

class IsolatedRegion : public InputError {
public:
    explicit IsolatedRegion(int region)
        : InputError("region " + std::to_string(region) + " has no neighbors"), region(region) {}
    int region;
};

class InvalidEnvironment : public InputError {
public:
    using InputError::InputError;
};

// Numerical trouble. Exit code 3.
class NumericalError : public Error {
public:
    using Error::Error;
};

class AllWeightsZero : public NumericalError {
public:
    AllWeightsZero()
        : NumericalError("all kernel weights are zero; bandwidth too small for the grid") {}
};

class DegenerateDesign : public NumericalError {
public:
    explicit DegenerateDesign(int tau, int region = -1)
        : NumericalError(describe(tau, region)), tau(tau), region(region) {}
    int tau;     // 1-based interval
    int region;  // 1-based region, -1 when temporal

private:
    static std::string describe(int tau, int region) {
        std::string s = "singular Gram matrix at interval " + std::to_string(tau);
        if (region >= 0) s += ", region " + std::to_string(region);
        return s;
    }
};

class BootstrapDegenerate : public NumericalError {
public:
    BootstrapDegenerate() : NumericalError("all bootstrap draws are identical") {}
};

class EmptyArm : public InputError {
public:
    explicit EmptyArm(int arm)
        : InputError("no observations with action " + std::to_string(arm)), arm(arm) {}
    int arm;
};

}  // namespace switchlab
