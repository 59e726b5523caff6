#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flow {

// Raised when tensor extents do not satisfy an operation's shape contract.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a value-level precondition is violated (non-scalar loss,
// empty validity mask, malformed file, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Single RNG stream; every random draw in the library goes through one of
// these so that a seed fully determines a run.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(gen_);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }

    std::mt19937_64& engine() { return gen_; }

    std::string state() const;
    void set_state(const std::string& s);

  private:
    std::mt19937_64 gen_;
};

inline int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape);

}  // namespace flow
