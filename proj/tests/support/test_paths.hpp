#pragma once

#include <string>

inline std::string test_data(const std::string& name) { return std::string(MTDLIFT_TEST_DATA) + "/" + name; }
