#include "unirig/error.hpp"
#include "unirig/metrics.hpp"
#include "unirig/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

namespace unirig {

MachineInfo machine_info() {
  MachineInfo info;
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        info.cpu = line.substr(colon + 2);
      }
      break;
    }
  }
  if (info.cpu.empty()) {
    info.cpu = "unknown";
  }
  info.hardware_threads = static_cast<int>(std::thread::hardware_concurrency());
  info.threads = thread_count();
#if defined(__clang__)
  info.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  info.compiler = "gcc " __VERSION__;
#else
  info.compiler = "unknown";
#endif
  return info;
}

BenchTable throughput_bench(const std::string& stage, const std::function<void(int batch)>& call,
                            std::span<const int> batch_sizes, int repetitions, int warmup) {
  check(repetitions >= 1, ErrorCode::InvalidConfig, "bench needs at least one repetition");
  BenchTable table;
  table.stage = stage;
  table.warmup = std::max(warmup, 0);
  table.machine = machine_info();
  using Clock = std::chrono::steady_clock;
  for (const int batch : batch_sizes) {
    check(batch >= 1, ErrorCode::InvalidConfig, "batch sizes must be positive");
    for (int w = 0; w < table.warmup; ++w) {
      call(batch);
    }
    BenchRow row;
    row.batch = batch;
    row.repetitions = repetitions;
    row.low_confidence = repetitions == 1;
    for (int r = 0; r < repetitions; ++r) {
      const auto t0 = Clock::now();
      call(batch);
      const auto t1 = Clock::now();
      row.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::vector<double> sorted = row.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    const size_t m = sorted.size();
    row.ms_per_call = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    row.items_per_sec = row.ms_per_call > 0.0 ? 1e3 * batch / row.ms_per_call : 0.0;
    table.rows.push_back(std::move(row));
  }
  return table;
}

} // namespace unirig
