import { defineConfig } from 'vitest/config'

// end-to-end tests spawn the Python evaluation CLI, which trains episodes
export default defineConfig({
  test: {
    testTimeout: 180_000,
    hookTimeout: 180_000,
  },
})
