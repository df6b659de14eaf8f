import { defineConfig } from "vitest/config";

// base "./" so the bundle works when the job service mounts dist/ at "/"
// (or any other static prefix) without a rebuild.
export default defineConfig({
  base: "./",
  build: {
    outDir: "dist",
    target: "es2022",
    assetsInlineLimit: 8192,
  },
  server: {
    proxy: {
      "/api": "http://127.0.0.1:8484",
      "/health": "http://127.0.0.1:8484",
    },
  },
  test: {
    environment: "node",
    testTimeout: 120000,
    hookTimeout: 120000,
  },
});
