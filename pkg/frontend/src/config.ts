/** Build-time configuration. The only knob is the gateway base URL,
 * injected by esbuild with --define:__GATEWAY_BASE__='"http://..."'. */

declare const __GATEWAY_BASE__: string | undefined;

export const DEFAULT_GATEWAY = 'http://127.0.0.1:8440';

export function gatewayBase(): string {
  try {
    if (typeof __GATEWAY_BASE__ === 'string' && __GATEWAY_BASE__) {
      return __GATEWAY_BASE__;
    }
  } catch {
    // identifier not defined in this build; fall through
  }
  return DEFAULT_GATEWAY;
}
