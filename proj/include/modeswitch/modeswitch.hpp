#ifndef MODESWITCH_MODESWITCH_HPP
#define MODESWITCH_MODESWITCH_HPP

#include "analysis.hpp"
#include "episode.hpp"
#include "error.hpp"
#include "fixtures.hpp"
#include "io.hpp"
#include "jobs.hpp"
#include "lander.hpp"
#include "pacmap.hpp"
#include "planner.hpp"
#include "policy.hpp"
#include "report.hpp"
#include "service.hpp"
#include "trainer.hpp"

#endif
