#include "tffa/loading_set.hpp"

namespace tffa {

std::string to_string(LoadingStage stage) {
    switch (stage) {
        case LoadingStage::Initial: return "initial";
        case LoadingStage::Rotated: return "rotated";
        case LoadingStage::Smoothed: return "smoothed";
        case LoadingStage::Shrunk: return "shrunk";
    }
    return "initial";
}

LoadingStage loading_stage_from_string(const std::string& s) {
    if (s == "initial") return LoadingStage::Initial;
    if (s == "rotated") return LoadingStage::Rotated;
    if (s == "smoothed") return LoadingStage::Smoothed;
    if (s == "shrunk") return LoadingStage::Shrunk;
    throw ValidationError("unknown loading stage: " + s);
}

}  // namespace tffa
