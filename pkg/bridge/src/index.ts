#!/usr/bin/env node
/**
 * Bridge entry point.
 *
 *   mangapipe-bridge [--port N] [--backend stub|florence] [--checkpoint ID]
 *
 * Environment overrides: BRIDGE_PORT, BRIDGE_BACKEND, BRIDGE_CHECKPOINT.
 * A checkpoint that fails to load aborts startup with a nonzero exit.
 */

import { BackendKind, createBackend } from './backend.js';
import { serve } from './server.js';

interface Config {
  port: number;
  backend: BackendKind;
  checkpoint?: string;
}

export function parseConfig(argv: string[], env: NodeJS.ProcessEnv): Config {
  const config: Config = {
    port: Number(env.BRIDGE_PORT ?? 8760),
    backend: (env.BRIDGE_BACKEND as BackendKind) ?? 'stub',
    checkpoint: env.BRIDGE_CHECKPOINT,
  };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === '--port') config.port = Number(argv[++i]);
    else if (arg === '--backend') config.backend = argv[++i] as BackendKind;
    else if (arg === '--checkpoint') config.checkpoint = argv[++i];
    else throw new Error(`unknown argument: ${arg}`);
  }
  if (!Number.isInteger(config.port) || config.port < 0 || config.port > 65535) {
    throw new Error(`invalid port: ${config.port}`);
  }
  if (config.backend !== 'stub' && config.backend !== 'florence') {
    throw new Error(`unknown backend: ${config.backend}`);
  }
  return config;
}

async function main(): Promise<void> {
  const config = parseConfig(process.argv.slice(2), process.env);
  const backend = await createBackend(config.backend, config.checkpoint);
  const server = await serve(backend, config.port);
  console.log(`bridge (${backend.capabilities().backend}) listening on ${server.baseUrl}`);
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('index.js') || entry.endsWith('mangapipe-bridge')) {
  main().catch((err) => {
    console.error(`startup failed: ${err?.message ?? err}`);
    process.exit(1);
  });
}
