#include "flow/common.hpp"

#include <sstream>

namespace flow {

std::string Rng::state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (is.fail()) throw ContractError("Rng::set_state: unparsable engine state");
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace flow
