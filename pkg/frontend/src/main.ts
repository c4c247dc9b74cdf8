import { GatewayClient } from './api';
import { PortalApp } from './app';
import { gatewayBase } from './config';
import { PortalStore } from './store';

const root = document.getElementById('app');
if (root) {
  const app = new PortalApp(
    root,
    new GatewayClient(gatewayBase()),
    new PortalStore(window.localStorage),
  );
  void app.start();
  // handy from the console
  (window as any).portal = app;
}
