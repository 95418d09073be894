#pragma once

#ifndef IBTS_VERSION
#define IBTS_VERSION "unknown"
#endif

namespace ibts {

inline const char* version() { return IBTS_VERSION; }

}  // namespace ibts
