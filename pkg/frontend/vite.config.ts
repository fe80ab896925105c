import { defineConfig } from "vitest/config";

export default defineConfig({
  build: {
    outDir: "dist",
    target: "es2022",
  },
  test: {
    environment: "jsdom",
    // the live suite spawns the Python service; give it room on slow machines
    testTimeout: 30000,
    hookTimeout: 60000,
  },
});
