#pragma once

// Umbrella header for the droidcrew multi-agent device-operation runtime.

#include "droidcrew/adb_device.hpp"
#include "droidcrew/device.hpp"
#include "droidcrew/errors.hpp"
#include "droidcrew/evalkit.hpp"
#include "droidcrew/expert.hpp"
#include "droidcrew/gateway.hpp"
#include "droidcrew/memory.hpp"
#include "droidcrew/orchestrator.hpp"
#include "droidcrew/runtime.hpp"
#include "droidcrew/sim_device.hpp"
#include "droidcrew/toolsmith.hpp"
#include "droidcrew/trajectory.hpp"
#include "droidcrew/util.hpp"
