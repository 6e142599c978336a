#include "datesort/types.hpp"

namespace datesort {

namespace {
constexpr const char* kVarietyNames[kNumVarieties] = {
    "IRAQI",         "ROTANA",        "DEGLET",        "BERHI",
    "AJWA",          "MEDJOOL_RUTAB", "SUKKARY_RUTAB", "SUKKARY_DRIED",
};
constexpr const char* kRipenessNames[3] = {"KHALAL", "RUTAB", "TAMAR"};
}  // namespace

const char* variety_name(Variety v) {
    return kVarietyNames[static_cast<int>(v)];
}

Variety variety_from_name(const std::string& name) {
    for (int i = 0; i < kNumVarieties; ++i) {
        if (name == kVarietyNames[i]) return static_cast<Variety>(i);
    }
    throw ValidationError("unknown variety name: '" + name + "'");
}

const char* ripeness_name(Ripeness r) {
    return kRipenessNames[static_cast<int>(r)];
}

Ripeness ripeness_from_name(const std::string& name) {
    for (int i = 0; i < 3; ++i) {
        if (name == kRipenessNames[i]) return static_cast<Ripeness>(i);
    }
    throw ValidationError("unknown ripeness name: '" + name + "'");
}

}  // namespace datesort
