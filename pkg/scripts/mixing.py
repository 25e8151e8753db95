"""Slowdown of a long request when shorter ones are injected into its batch, and the chunked-prefill variant."""

from llmroute.instance import mixing_protocol
from llmroute.latency import HardwareProfile, estimate_request_time


def main() -> None:
    profile = HardwareProfile()
    print(f"estimate_request_time(1000, 1000) = {estimate_request_time(profile, 1000, 1000):.2f} s")
    solo, _ = mixing_protocol(profile, every=10**9)
    print(f"solo run:                 E2E {solo:6.2f} s")
    for every in (200, 100, 50, 25):
        e2e, inst = mixing_protocol(profile, every=every)
        print(f"inject every {every:>3} iters:  E2E {e2e:6.2f} s  ({inst.prefill_iterations} prefill iterations)")
    for chunk in (512, 256):
        e2e, inst = mixing_protocol(profile, chunk_size=chunk)
        print(f"every 50, chunk {chunk:>4}:   E2E {e2e:6.2f} s")


if __name__ == "__main__":
    main()
