import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // The end-to-end test boots the mapping service in a child process.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
