#include "tellme/instrument.hpp"

namespace tellme::instrument {

Counters& counters() {
  thread_local Counters c;
  return c;
}

}  // namespace tellme::instrument
