import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 60000,
    hookTimeout: 60000,
    // e2e spawns real hub/server processes; keep files sequential.
    fileParallelism: false,
  },
});
