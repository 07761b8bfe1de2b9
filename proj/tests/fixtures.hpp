#pragma once

#include <string>

#include "gql/dataset.hpp"

namespace gql::testing {

inline std::string data_path(const std::string& name) {
  return std::string(GQL_DATA_DIR) + "/" + name;
}

inline Dataset toy1() { return load_dataset(data_path("toy1.json")); }
inline Dataset toy2() { return load_dataset(data_path("toy2.json")); }
inline Dataset toy3() { return load_dataset(data_path("toy3.json")); }

/// Shannon entropy values frozen from a direct evaluation of -sum p log2 p.
inline constexpr double kH_3_4 = 0.8112781244591328;  // H(3/4)
inline constexpr double kH_2_3 = 0.9182958340544896;  // H(2/3)

}  // namespace gql::testing
