#include "seqgen/timing.h"

namespace seqgen {

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kModelLoad: return "model_load";
    case Stage::kPreprocess: return "preprocess";
    case Stage::kEncode: return "encode";
    case Stage::kDecode: return "decode";
    case Stage::kCacheMaintenance: return "cache_maintenance";
    case Stage::kNgramBlocking: return "ngram_blocking";
    case Stage::kSearchBookkeeping: return "search_bookkeeping";
    case Stage::kPostProcess: return "post_process";
    case Stage::kOther: return "other";
  }
  return "?";
}

double StageTimes::generation() const {
  const StageTimes& t = *this;
  return t[Stage::kEncode] + t[Stage::kDecode] + t[Stage::kCacheMaintenance] + t[Stage::kNgramBlocking] +
         t[Stage::kSearchBookkeeping] + t[Stage::kOther];
}

}  // namespace seqgen
